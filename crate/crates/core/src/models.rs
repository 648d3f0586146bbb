//! Model families, conditional log-odds, transition matrices and path simulation.
//!
//! Histories are passed newest-first: `y_history[0]` is `Y_{t−1}`,
//! `lambda_history[0]` is `λ_{t−1}`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::categorical::{sample_category, softmax_link, softmax_probs, CategoryValue, LogOdds};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::stability::{contraction_certificate, ContractionCertificate};

/// Largest state space `N^q` that [`transition_matrix`] will enumerate.
pub const MAX_STATES: usize = 4096;

/// Burn-in used when no contraction certificate is available.
pub const DEFAULT_BURN_IN: usize = 1000;

/// `λ_t = d + Σ_{j=1}^{L} A_j Y_{t−j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedLinear {
    pub d: DVector<f64>,
    pub a: Vec<DMatrix<f64>>,
}

/// `λ_t = A_0 + Σ_{i=1}^{p} A_i λ_{t−i} + Σ_{i=1}^{q} B_i Y_{t−i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFeedback {
    pub a0: DVector<f64>,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
}

/// Binary threshold model `λ_t = d + β_1 λ⁺_{t−1} + β_2 λ⁻_{t−1} + α Y_{t−1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdBinary {
    pub d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub alpha: f64,
}

/// Order-`q` multinomial logistic chain with exogenous covariates.
///
/// Category `j` has log-odds `g_j = c_j + Σ_l Γ_{j,l}·y_{t−l} + Δ_j·z_t`, i.e.
/// `θ_j · x_t` with design row `x_t = (1, y_{t−1}, …, y_{t−q}, z_t)`. `theta`
/// stacks the `N − 1` blocks `θ_j` of length [`CovariateLogistic::block_len`].
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateLogistic {
    pub n_categories: usize,
    pub q: usize,
    pub covariate_dim: usize,
    pub theta: Vec<f64>,
}

impl CovariateLogistic {
    pub fn new(n_categories: usize, q: usize, covariate_dim: usize, theta: Vec<f64>) -> Result<Self> {
        if n_categories < 2 {
            return Err(Error::InvalidArgument("need at least 2 categories".into()));
        }
        let m = Self { n_categories, q, covariate_dim, theta };
        if m.theta.len() != m.n_params() {
            return Err(Error::Dimension(format!(
                "theta has {} entries, expected (N−1)·(1 + q(N−1) + d_z) = {}",
                m.theta.len(),
                m.n_params()
            )));
        }
        if m.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("theta must be finite".into()));
        }
        Ok(m)
    }

    pub fn zeros(n_categories: usize, q: usize, covariate_dim: usize) -> Result<Self> {
        let len = (n_categories - 1) * (1 + q * (n_categories - 1) + covariate_dim);
        Self::new(n_categories, q, covariate_dim, vec![0.0; len])
    }

    pub fn block_len(&self) -> usize {
        1 + self.q * (self.n_categories - 1) + self.covariate_dim
    }

    pub fn n_params(&self) -> usize {
        (self.n_categories - 1) * self.block_len()
    }

    pub fn block(&self, j: usize) -> &[f64] {
        let k = self.block_len();
        &self.theta[j * k..(j + 1) * k]
    }

    /// Matrix whose row `j` is `Γ_{j,lag}` (lag is 1-based).
    pub fn lag_matrix(&self, lag: usize) -> DMatrix<f64> {
        let m = self.n_categories - 1;
        let off = 1 + (lag - 1) * m;
        DMatrix::from_fn(m, m, |j, c| self.block(j)[off + c])
    }

    /// Design row `(1, y_{t−1}, …, y_{t−q}, z_t)`.
    pub fn design_row(&self, y_history: &[CategoryValue], z: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.block_len());
        x.push(1.0);
        for y in &y_history[..self.q] {
            x.extend(y.one_hot());
        }
        x.extend_from_slice(z);
        x
    }
}

/// The implemented model families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub enum ModelSpec {
    TruncatedLinear(TruncatedLinear),
    LinearFeedback(LinearFeedback),
    ThresholdBinary(ThresholdBinary),
    CovariateLogistic(CovariateLogistic),
}

impl ModelSpec {
    pub fn truncated_linear(d: Vec<f64>, a: Vec<Vec<f64>>) -> Result<Self> {
        ModelDoc::TruncatedLinear { d, a }.try_into()
    }

    pub fn linear_feedback(a0: Vec<f64>, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> Result<Self> {
        ModelDoc::LinearFeedback { a0, a, b }.try_into()
    }

    pub fn threshold_binary(d: f64, beta1: f64, beta2: f64, alpha: f64) -> Result<Self> {
        ModelDoc::ThresholdBinary { d, beta1, beta2, alpha }.try_into()
    }

    pub fn covariate_logistic(n_categories: usize, q: usize, covariate_dim: usize, theta: Vec<f64>) -> Result<Self> {
        Ok(Self::CovariateLogistic(CovariateLogistic::new(n_categories, q, covariate_dim, theta)?))
    }

    pub fn family(&self) -> &'static str {
        match self {
            Self::TruncatedLinear(_) => "truncated_linear",
            Self::LinearFeedback(_) => "linear_feedback",
            Self::ThresholdBinary(_) => "threshold_binary",
            Self::CovariateLogistic(_) => "covariate_logistic",
        }
    }

    pub fn n_categories(&self) -> usize {
        match self {
            Self::TruncatedLinear(m) => m.d.len() + 1,
            Self::LinearFeedback(m) => m.a0.len() + 1,
            Self::ThresholdBinary(_) => 2,
            Self::CovariateLogistic(m) => m.n_categories,
        }
    }

    /// Number of lagged categories the log-odds depend on.
    pub fn y_order(&self) -> usize {
        match self {
            Self::TruncatedLinear(m) => m.a.len(),
            Self::LinearFeedback(m) => m.b.len(),
            Self::ThresholdBinary(_) => 1,
            Self::CovariateLogistic(m) => m.q,
        }
    }

    /// Number of lagged log-odds vectors (zero for models without feedback).
    pub fn lambda_order(&self) -> usize {
        match self {
            Self::LinearFeedback(m) => m.a.len(),
            Self::ThresholdBinary(_) => 1,
            _ => 0,
        }
    }

    pub fn covariate_dim(&self) -> usize {
        match self {
            Self::CovariateLogistic(m) => m.covariate_dim,
            _ => 0,
        }
    }

    pub fn has_feedback(&self) -> bool {
        self.lambda_order() > 0
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }
}

/// JSON document form: a `family` tag and flat parameter arrays, matrices row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
enum ModelDoc {
    TruncatedLinear {
        d: Vec<f64>,
        a: Vec<Vec<f64>>,
    },
    LinearFeedback {
        a0: Vec<f64>,
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
    },
    ThresholdBinary {
        d: f64,
        beta1: f64,
        beta2: f64,
        alpha: f64,
    },
    CovariateLogistic {
        n_categories: usize,
        q: usize,
        covariate_dim: usize,
        theta: Vec<f64>,
    },
}

fn square_matrices(name: &str, dim: usize, flat: Vec<Vec<f64>>) -> Result<Vec<DMatrix<f64>>> {
    flat.into_iter()
        .enumerate()
        .map(|(i, v)| {
            if v.len() != dim * dim {
                return Err(Error::Dimension(format!(
                    "{name}[{i}] has {} entries, expected {}",
                    v.len(),
                    dim * dim
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name}[{i}] has non-finite entries")));
            }
            Ok(DMatrix::from_row_slice(dim, dim, &v))
        })
        .collect()
}

fn finite_vector(name: &str, v: Vec<f64>) -> Result<DVector<f64>> {
    if v.is_empty() {
        return Err(Error::Dimension(format!("{name} must have N − 1 ≥ 1 entries")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} has non-finite entries")));
    }
    Ok(DVector::from_vec(v))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl TryFrom<ModelDoc> for ModelSpec {
    type Error = Error;

    fn try_from(doc: ModelDoc) -> Result<Self> {
        match doc {
            ModelDoc::TruncatedLinear { d, a } => {
                let d = finite_vector("d", d)?;
                if a.is_empty() {
                    return Err(Error::Dimension("truncated_linear needs at least one lag matrix".into()));
                }
                let a = square_matrices("a", d.len(), a)?;
                Ok(Self::TruncatedLinear(TruncatedLinear { d, a }))
            }
            ModelDoc::LinearFeedback { a0, a, b } => {
                let a0 = finite_vector("a0", a0)?;
                if a.is_empty() || b.is_empty() {
                    return Err(Error::Dimension("linear_feedback needs p ≥ 1 and q ≥ 1".into()));
                }
                let a = square_matrices("a", a0.len(), a)?;
                let b = square_matrices("b", a0.len(), b)?;
                Ok(Self::LinearFeedback(LinearFeedback { a0, a, b }))
            }
            ModelDoc::ThresholdBinary { d, beta1, beta2, alpha } => {
                if [d, beta1, beta2, alpha].iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument("threshold parameters must be finite".into()));
                }
                Ok(Self::ThresholdBinary(ThresholdBinary { d, beta1, beta2, alpha }))
            }
            ModelDoc::CovariateLogistic { n_categories, q, covariate_dim, theta } => {
                Self::covariate_logistic(n_categories, q, covariate_dim, theta)
            }
        }
    }
}

impl From<ModelSpec> for ModelDoc {
    fn from(m: ModelSpec) -> Self {
        match m {
            ModelSpec::TruncatedLinear(m) => ModelDoc::TruncatedLinear {
                d: m.d.as_slice().to_vec(),
                a: m.a.iter().map(row_major).collect(),
            },
            ModelSpec::LinearFeedback(m) => ModelDoc::LinearFeedback {
                a0: m.a0.as_slice().to_vec(),
                a: m.a.iter().map(row_major).collect(),
                b: m.b.iter().map(row_major).collect(),
            },
            ModelSpec::ThresholdBinary(ThresholdBinary { d, beta1, beta2, alpha }) => {
                ModelDoc::ThresholdBinary { d, beta1, beta2, alpha }
            }
            ModelSpec::CovariateLogistic(m) => ModelDoc::CovariateLogistic {
                n_categories: m.n_categories,
                q: m.q,
                covariate_dim: m.covariate_dim,
                theta: m.theta,
            },
        }
    }
}

fn check_history(model: &ModelSpec, y_history: &[CategoryValue], lambda_history: &[LogOdds]) -> Result<()> {
    let n = model.n_categories();
    if y_history.len() < model.y_order() {
        return Err(Error::InsufficientHistory { needed: model.y_order(), got: y_history.len() });
    }
    if lambda_history.len() < model.lambda_order() {
        return Err(Error::InsufficientHistory { needed: model.lambda_order(), got: lambda_history.len() });
    }
    if let Some(y) = y_history[..model.y_order()].iter().find(|y| y.n_categories() != n) {
        return Err(Error::Dimension(format!(
            "history category has N = {}, model has N = {n}",
            y.n_categories()
        )));
    }
    if lambda_history[..model.lambda_order()].iter().any(|l| l.n_categories() != n) {
        return Err(Error::Dimension("log-odds history has the wrong length".into()));
    }
    Ok(())
}

fn lin_comb(acc: &mut DVector<f64>, m: &DMatrix<f64>, x: &[f64]) {
    *acc += m * DVector::from_column_slice(x);
}

/// The recursion `f(λ_{t−1}, …, λ_{t−p}; y_{t−1}, …, y_{t−q})` of a feedback model.
pub(crate) fn feedback_map(model: &ModelSpec, lambdas: &[&[f64]], ys: &[CategoryValue]) -> Vec<f64> {
    match model {
        ModelSpec::LinearFeedback(m) => {
            let mut acc = m.a0.clone();
            for (a, x) in m.a.iter().zip(lambdas) {
                lin_comb(&mut acc, a, x);
            }
            for (b, y) in m.b.iter().zip(ys) {
                lin_comb(&mut acc, b, &y.one_hot());
            }
            acc.as_slice().to_vec()
        }
        ModelSpec::ThresholdBinary(m) => {
            let x = lambdas[0][0];
            let y = ys[0].one_hot()[0];
            vec![m.d + m.beta1 * x.max(0.0) + m.beta2 * x.min(0.0) + m.alpha * y]
        }
        _ => unreachable!("feedback_map called on a model without feedback"),
    }
}

/// Conditional log-odds `λ_t` given the recent past (newest-first) and, for
/// covariate models, the current covariate `z_t`.
pub fn eval_logodds(
    model: &ModelSpec,
    y_history: &[CategoryValue],
    lambda_history: &[LogOdds],
    z: Option<&[f64]>,
) -> Result<LogOdds> {
    check_history(model, y_history, lambda_history)?;
    let values = match model {
        ModelSpec::TruncatedLinear(m) => {
            if z.is_some_and(|z| !z.is_empty()) {
                return Err(Error::Dimension("truncated_linear takes no covariate".into()));
            }
            let mut acc = m.d.clone();
            for (a, y) in m.a.iter().zip(y_history) {
                lin_comb(&mut acc, a, &y.one_hot());
            }
            acc.as_slice().to_vec()
        }
        ModelSpec::LinearFeedback(_) | ModelSpec::ThresholdBinary(_) => {
            if z.is_some_and(|z| !z.is_empty()) {
                return Err(Error::Dimension(format!("{} takes no covariate", model.family())));
            }
            let lambdas: Vec<&[f64]> = lambda_history.iter().map(|l| l.as_slice()).collect();
            feedback_map(model, &lambdas, y_history)
        }
        ModelSpec::CovariateLogistic(m) => {
            let z = match z {
                Some(z) => z,
                None if m.covariate_dim == 0 => &[],
                None => return Err(Error::Dimension("covariate_logistic needs a covariate vector".into())),
            };
            if z.len() != m.covariate_dim {
                return Err(Error::Dimension(format!(
                    "covariate has dimension {}, model expects {}",
                    z.len(),
                    m.covariate_dim
                )));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite covariate".into()));
            }
            let x = m.design_row(y_history, z);
            (0..m.n_categories - 1)
                .map(|j| m.block(j).iter().zip(&x).map(|(a, b)| a * b).sum())
                .collect()
        }
    };
    LogOdds::new(values)
}

/// Starting history for [`simulate`], newest-first.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub y_history: Vec<CategoryValue>,
    pub lambda_history: Vec<LogOdds>,
}

impl InitialState {
    /// All-reference category history and zero log-odds.
    pub fn reference(model: &ModelSpec) -> Self {
        let n = model.n_categories();
        let reference = CategoryValue::reference(n).expect("model has N ≥ 2");
        Self {
            y_history: vec![reference; model.y_order()],
            lambda_history: vec![LogOdds::zeros(n); model.lambda_order()],
        }
    }
}

/// A simulated (or observed) trajectory.
///
/// `lambda` is parallel to `y` for simulated paths and may be empty for
/// observed data read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPath {
    pub y: Vec<CategoryValue>,
    pub lambda: Vec<LogOdds>,
    pub z: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl SeriesPath {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_categories(&self) -> Option<usize> {
        self.y.first().map(|y| y.n_categories())
    }

    /// Empirical frequency of each category `1..=N`.
    pub fn frequencies(&self, n_categories: usize) -> Vec<f64> {
        let mut counts = vec![0usize; n_categories];
        for y in &self.y {
            counts[y.index() - 1] += 1;
        }
        counts.iter().map(|c| *c as f64 / self.y.len().max(1) as f64).collect()
    }

    /// CSV with columns `t, y, lambda_1…lambda_{N−1}, z_1…z_{d_z}`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.n_categories().unwrap_or(2);
        let dz = self.z.as_ref().and_then(|z| z.first()).map_or(0, |z| z.len());
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "y".to_string()];
        if !self.lambda.is_empty() {
            header.extend((1..n).map(|k| format!("lambda_{k}")));
        }
        header.extend((1..=dz).map(|k| format!("z_{k}")));
        out.write_record(&header)?;
        for (t, y) in self.y.iter().enumerate() {
            let mut rec = vec![t.to_string(), y.index().to_string()];
            if let Some(l) = self.lambda.get(t) {
                rec.extend(l.as_slice().iter().map(|v| v.to_string()));
            }
            if let Some(z) = &self.z {
                rec.extend(z[t].iter().map(|v| v.to_string()));
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the CSV layout written by [`SeriesPath::write_csv`]. Only the `y`
    /// column is required; `lambda_*` and `z_*` columns are picked up when present.
    pub fn read_csv<R: Read>(r: R, n_categories: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let y_col = col("y").ok_or_else(|| Error::InvalidArgument("data CSV has no `y` column".into()))?;
        let lambda_cols: Vec<usize> = (1..n_categories).map_while(|k| col(&format!("lambda_{k}"))).collect();
        let z_cols: Vec<usize> = (1..).map_while(|k| col(&format!("z_{k}"))).collect();
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("cannot parse {what} value `{s}`")))
        };
        let mut path = SeriesPath { y: Vec::new(), lambda: Vec::new(), z: None, seed: 0 };
        let mut zs = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let y: usize = rec[y_col]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("cannot parse category `{}`", &rec[y_col])))?;
            path.y.push(CategoryValue::new(y, n_categories)?);
            if lambda_cols.len() == n_categories - 1 {
                let l = lambda_cols.iter().map(|c| parse(&rec[*c], "lambda")).collect::<Result<Vec<_>>>()?;
                path.lambda.push(LogOdds::new(l)?);
            }
            zs.push(z_cols.iter().map(|c| parse(&rec[*c], "covariate")).collect::<Result<Vec<_>>>()?);
        }
        if !z_cols.is_empty() {
            path.z = Some(zs);
        }
        Ok(path)
    }
}

/// Burn-in `⌈k·log(tol) / log κ⌉` from a contraction certificate, else [`DEFAULT_BURN_IN`].
pub fn default_burn_in(model: &ModelSpec, tol: f64) -> usize {
    match contraction_certificate(model) {
        Ok(cert) if tol > 0.0 && tol < 1.0 => {
            (cert.k as f64 * tol.ln() / cert.kappa.ln()).ceil().max(1.0) as usize
        }
        _ => DEFAULT_BURN_IN,
    }
}

/// Forward sampler: log-odds → link → inverse-CDF draw, repeated for
/// `burn_in + n` steps, keeping the last `n`.
///
/// `z_path[t]` is the covariate of step `t` counted from the start of the
/// burn-in. Only covariate models read it.
pub fn simulate(
    model: &ModelSpec,
    n: usize,
    burn_in: usize,
    init: Option<&InitialState>,
    seed: u64,
    z_path: Option<&[Vec<f64>]>,
) -> Result<SeriesPath> {
    let total = n + burn_in;
    let needs_z = model.covariate_dim() > 0;
    if needs_z {
        let have = z_path.map_or(0, |z| z.len());
        if have < total {
            return Err(Error::Dimension(format!(
                "covariate path has {have} rows, need n + burn_in = {total}"
            )));
        }
    }
    let init = init.cloned().unwrap_or_else(|| InitialState::reference(model));
    // Newest-first working histories.
    let mut ys = init.y_history;
    let mut lambdas = init.lambda_history;
    check_history(model, &ys, &lambdas)?;
    ys.truncate(model.y_order());
    lambdas.truncate(model.lambda_order());

    let mut rng = rng_from_seed(seed);
    let mut path = SeriesPath {
        y: Vec::with_capacity(n),
        lambda: Vec::with_capacity(n),
        z: needs_z.then(|| Vec::with_capacity(n)),
        seed,
    };
    for t in 0..total {
        let z = if needs_z { z_path.map(|z| z[t].as_slice()) } else { None };
        let lambda = eval_logodds(model, &ys, &lambdas, z)?;
        let p = softmax_link(&lambda)?;
        let y = sample_category(&p, rng.random())?;
        if !ys.is_empty() {
            ys.pop();
            ys.insert(0, y);
        }
        if !lambdas.is_empty() {
            lambdas.pop();
            lambdas.insert(0, lambda.clone());
        }
        if t >= burn_in {
            path.y.push(y);
            path.lambda.push(lambda);
            if let (Some(out), Some(z)) = (path.z.as_mut(), z) {
                out.push(z.to_vec());
            }
        }
    }
    Ok(path)
}

/// The state space `E^q` of lag windows `(u_1, …, u_q)`, `u_1` the most recent.
///
/// Encoding: `index = Σ_s (u_s − 1)·N^{s−1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpace {
    pub n_categories: usize,
    pub order: usize,
}

impl StateSpace {
    pub fn new(n_categories: usize, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("lag-window order must be at least 1".into()));
        }
        match n_categories.checked_pow(order as u32) {
            Some(size) if size <= MAX_STATES => Ok(Self { n_categories, order }),
            size => Err(Error::StateSpaceTooLarge { size: size.unwrap_or(usize::MAX), limit: MAX_STATES }),
        }
    }

    pub fn size(&self) -> usize {
        self.n_categories.pow(self.order as u32)
    }

    pub fn encode(&self, window: &[CategoryValue]) -> usize {
        window[..self.order]
            .iter()
            .rev()
            .fold(0, |acc, u| acc * self.n_categories + (u.index() - 1))
    }

    pub fn decode(&self, mut index: usize) -> Vec<CategoryValue> {
        (0..self.order)
            .map(|_| {
                let c = index % self.n_categories;
                index /= self.n_categories;
                CategoryValue::new(c + 1, self.n_categories).expect("valid digit")
            })
            .collect()
    }

    /// Index of the window obtained by observing `v` after `window`.
    pub fn shift(&self, index: usize, v: CategoryValue) -> usize {
        let drop_oldest = index % self.n_categories.pow(self.order as u32 - 1);
        drop_oldest * self.n_categories + (v.index() - 1)
    }

    /// Windows `(Y_t, …, Y_{t−q+1})` for `t = q−1, …, len−1` of a path (oldest-first input).
    pub fn lift(&self, y: &[CategoryValue]) -> Vec<usize> {
        if y.len() < self.order {
            return Vec::new();
        }
        (self.order - 1..y.len())
            .map(|t| {
                let window: Vec<CategoryValue> = (0..self.order).map(|s| y[t - s]).collect();
                self.encode(&window)
            })
            .collect()
    }
}

/// Order of the chain on `E^q` defined by a finite-order model without feedback.
fn markov_order(model: &ModelSpec) -> Result<usize> {
    match model {
        ModelSpec::TruncatedLinear(m) => Ok(m.a.len()),
        ModelSpec::CovariateLogistic(m) if m.q >= 1 => Ok(m.q),
        ModelSpec::CovariateLogistic(_) => Err(Error::InvalidArgument(
            "transition matrix needs lag order q ≥ 1".into(),
        )),
        _ => Err(Error::InvalidArgument(format!(
            "{} has a latent feedback process; no finite transition matrix",
            model.family()
        ))),
    }
}

/// Stochastic matrix of the lag-window chain on `E^q`:
/// `P((u_1…u_q), (v_1…v_q)) = Q(u, v_1)·∏_s 1{v_{s+1} = u_s}`.
pub fn transition_matrix(model: &ModelSpec, z: Option<&[f64]>) -> Result<DMatrix<f64>> {
    let order = markov_order(model)?;
    let space = StateSpace::new(model.n_categories(), order)?;
    let n = model.n_categories();
    let mut p = DMatrix::zeros(space.size(), space.size());
    for u in 0..space.size() {
        let window = space.decode(u);
        let lambda = eval_logodds(model, &window, &[], z)?;
        let probs = softmax_probs(lambda.as_slice())?;
        for (c, prob) in probs.iter().enumerate() {
            let v = space.shift(u, CategoryValue::new(c + 1, n)?);
            p[(u, v)] += prob;
        }
    }
    Ok(p)
}

/// Result of [`stationary_logodds_backward`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackwardLogOdds {
    /// Stacked `(λ_t, λ_{t−1}, …, λ_{t−p+1})`, length `(N−1)p`.
    pub value: Vec<f64>,
    /// Number of composed maps.
    pub depth: usize,
    /// Certified distance from `value` to the backward limit.
    pub error_bound: f64,
}

impl BackwardLogOdds {
    pub fn logodds(&self, n_categories: usize) -> LogOdds {
        LogOdds::new(self.value[..n_categories - 1].to_vec()).expect("finite")
    }
}

/// One application of `G_ȳ(x) = (f(x_1…x_p, ȳ), x_1, …, x_{p−1})`.
pub(crate) fn apply_g(model: &ModelSpec, x: &[f64], ybar: &[CategoryValue]) -> Vec<f64> {
    let m = model.n_categories() - 1;
    let lambdas: Vec<&[f64]> = x.chunks(m).collect();
    let mut out = feedback_map(model, &lambdas, ybar);
    out.extend_from_slice(&x[..x.len() - m]);
    out
}

/// Backward composition `G_{ȳ_1}∘…∘G_{ȳ_s}(x0)` with `ȳ_i = (Y_{t−i}, …, Y_{t−i−q+1})`.
///
/// `y_past` is newest-first (`y_past[0] = Y_{t−1}`). The depth `s` is the
/// smallest multiple of `k` for which the contraction certificate bounds the
/// distance to the limit by `tol`; the limit does not depend on `x0`.
pub fn stationary_logodds_backward(
    model: &ModelSpec,
    y_past: &[CategoryValue],
    x0: &[f64],
    tol: f64,
) -> Result<BackwardLogOdds> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    let cert: ContractionCertificate = contraction_certificate(model)?;
    let dim = cert.stack_dim;
    if x0.len() != dim {
        return Err(Error::Dimension(format!("x0 has length {}, expected {dim}", x0.len())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("x0 must be finite".into()));
    }
    let x0_norm = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let depth = cert.required_depth(x0_norm, tol);
    let q = model.y_order();
    let required = depth + q - 1;
    if y_past.len() < required {
        return Err(Error::HistoryTooShort { required, got: y_past.len() });
    }
    let n = model.n_categories();
    if y_past[..required].iter().any(|y| y.n_categories() != n) {
        return Err(Error::Dimension("past categories have the wrong N".into()));
    }
    let mut x = x0.to_vec();
    for i in (1..=depth).rev() {
        x = apply_g(model, &x, &y_past[i - 1..i - 1 + q]);
    }
    Ok(BackwardLogOdds {
        value: x,
        depth,
        error_bound: cert.truncation_error(depth, x0_norm),
    })
}
