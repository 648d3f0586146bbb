//! Conditional maximum likelihood for the covariate logistic model by damped
//! Newton–Raphson with analytic score and Hessian.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::categorical::CategoryValue;
use crate::error::{Error, Result};
use crate::models::{CovariateLogistic, ModelSpec, SeriesPath};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;

/// `‖θ‖∞` beyond which a non-converged fit is reported as separation.
pub const SEPARATION_NORM: f64 = 50.0;

const MAX_HALVINGS: usize = 60;

/// Steps may lose this many ulps of `|ℓ|` to rounding and still count as ascent.
const ROUNDING_ULPS: f64 = 64.0;

/// Design rows and responses for observations `t = q, …, n − 1` of a path
/// (0-based); the first `q` values only condition.
#[derive(Debug, Clone)]
pub struct LogitDesign {
    pub n_categories: usize,
    pub q: usize,
    pub covariate_dim: usize,
    /// `x_t = (1, y_{t−1}, …, y_{t−q}, z_t)`.
    pub rows: Vec<Vec<f64>>,
    /// 0-based category of `y_t`.
    pub response: Vec<usize>,
}

impl LogitDesign {
    pub fn new(n_categories: usize, q: usize, covariate_dim: usize, data: &SeriesPath) -> Result<Self> {
        let template = CovariateLogistic::zeros(n_categories, q, covariate_dim)?;
        if data.len() <= q {
            return Err(Error::HistoryTooShort { required: q + 1, got: data.len() });
        }
        if let Some(y) = data.y.iter().find(|y| y.n_categories() != n_categories) {
            return Err(Error::Dimension(format!(
                "observation has {} categories, model has {n_categories}",
                y.n_categories()
            )));
        }
        let z = match (&data.z, covariate_dim) {
            (_, 0) => None,
            (Some(z), d) => {
                if z.len() != data.len() {
                    return Err(Error::Dimension(format!("{} covariate rows for {} observations", z.len(), data.len())));
                }
                if let Some(r) = z.iter().find(|r| r.len() != d) {
                    return Err(Error::Dimension(format!("covariate row of length {}, expected {d}", r.len())));
                }
                Some(z)
            }
            (None, _) => return Err(Error::Dimension("model uses covariates but the data has none".into())),
        };
        let mut rows = Vec::with_capacity(data.len() - q);
        let mut response = Vec::with_capacity(data.len() - q);
        for t in q..data.len() {
            let history: Vec<CategoryValue> = (1..=q).map(|l| data.y[t - l]).collect();
            let zt: &[f64] = z.map_or(&[], |z| z[t].as_slice());
            rows.push(template.design_row(&history, zt));
            response.push(data.y[t].index() - 1);
        }
        Ok(Self { n_categories, q, covariate_dim, rows, response })
    }

    /// Design for the model's own dimensions.
    pub fn for_model(model: &ModelSpec, data: &SeriesPath) -> Result<Self> {
        match model {
            ModelSpec::CovariateLogistic(m) => Self::new(m.n_categories, m.q, m.covariate_dim, data),
            other => Err(Error::InvalidArgument(format!(
                "fitting is implemented for covariate_logistic, got {}",
                other.family()
            ))),
        }
    }

    pub fn block_len(&self) -> usize {
        1 + self.q * (self.n_categories - 1) + self.covariate_dim
    }

    pub fn n_params(&self) -> usize {
        (self.n_categories - 1) * self.block_len()
    }

    pub fn n_obs(&self) -> usize {
        self.rows.len()
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "theta has {} entries, design expects {}",
                theta.len(),
                self.n_params()
            )));
        }
        Ok(())
    }

    /// Log-odds `g_j = θ_j · x_t` and the log normaliser `log(1 + Σ_s e^{g_s})`.
    fn scores(&self, theta: &[f64], x: &[f64]) -> (Vec<f64>, f64) {
        let k = self.block_len();
        let g: Vec<f64> = theta.chunks(k).map(|b| b.iter().zip(x).map(|(a, b)| a * b).sum()).collect();
        let shift = g.iter().copied().fold(0.0_f64, f64::max);
        let log_norm = shift + ((-shift).exp() + g.iter().map(|v| (v - shift).exp()).sum::<f64>()).ln();
        (g, log_norm)
    }
}

/// `Σ_t [Σ_j y_{jt} g_j − log(1 + Σ_s e^{g_s})]`.
pub fn loglik(theta: &[f64], design: &LogitDesign) -> Result<f64> {
    design.check_theta(theta)?;
    let reference = design.n_categories - 1;
    Ok(design
        .rows
        .iter()
        .zip(&design.response)
        .map(|(x, y)| {
            let (g, log_norm) = design.scores(theta, x);
            let fit = if *y == reference { 0.0 } else { g[*y] };
            fit - log_norm
        })
        .sum())
}

/// Gradient `Σ_t X_tᵀ(y_t − p_t)` and Hessian `−Σ_t X_tᵀ(diag p_t − p_t p_tᵀ)X_t`.
pub fn score_and_hessian(theta: &[f64], design: &LogitDesign) -> Result<(DVector<f64>, DMatrix<f64>)> {
    design.check_theta(theta)?;
    let m = design.n_categories - 1;
    let k = design.block_len();
    let mut grad = DVector::zeros(m * k);
    let mut hess = DMatrix::zeros(m * k, m * k);
    for (x, y) in design.rows.iter().zip(&design.response) {
        let (g, log_norm) = design.scores(theta, x);
        let p: Vec<f64> = g.iter().map(|v| (v - log_norm).exp()).collect();
        let xv = DVector::from_column_slice(x);
        let xx = &xv * xv.transpose();
        for j in 0..m {
            let resid = if *y == j { 1.0 } else { 0.0 } - p[j];
            grad.rows_mut(j * k, k).axpy(resid, &xv, 1.0);
            for l in j..m {
                let w = if j == l { p[j] * (1.0 - p[j]) } else { -p[j] * p[l] };
                let mut block = hess.view_mut((j * k, l * k), (k, k));
                block -= &xx * w;
            }
        }
    }
    for j in 0..m {
        for l in j + 1..m {
            let block = hess.view((j * k, l * k), (k, k)).transpose();
            hess.view_mut((l * k, j * k), (k, k)).copy_from(&block);
        }
    }
    Ok((grad, hess))
}

/// Outcome of [`fit_newton`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    pub loglik: f64,
    /// `‖∇ℓ(θ̂)‖∞`.
    pub gradient_norm: f64,
    pub hessian: Vec<Vec<f64>>,
    /// Square roots of the diagonal of `(−H)^{-1}`; `None` when `−H` is not positive definite.
    pub std_errors: Option<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub hessian_negative_definite: bool,
    pub warnings: Vec<String>,
}

/// Damped Newton–Raphson from `init` (zero when `None`). Each step halves
/// until the log-likelihood does not decrease (up to rounding); stops when
/// `‖∇ℓ‖∞ < tol`.
pub fn fit_newton(design: &LogitDesign, init: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<FitResult> {
    let mut theta = match init {
        Some(t) => {
            design.check_theta(t)?;
            t.to_vec()
        }
        None => vec![0.0; design.n_params()],
    };
    let mut warnings = Vec::new();
    let mut seen = vec![false; design.n_categories];
    design.response.iter().for_each(|y| seen[*y] = true);
    for (c, s) in seen.iter().enumerate() {
        if !s {
            warnings.push(format!("category {} never observed", c + 1));
        }
    }

    let mut ll = loglik(&theta, design)?;
    let mut iterations = 0;
    let mut converged = false;
    let (mut grad, mut hess) = score_and_hessian(&theta, design)?;
    loop {
        let gnorm = grad.amax();
        if gnorm < tol {
            converged = true;
            break;
        }
        if iterations == max_iter {
            break;
        }
        let norm = theta.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if norm > SEPARATION_NORM {
            return Err(Error::Separation { norm });
        }
        iterations += 1;
        let chol = (-&hess).cholesky().ok_or(Error::SingularHessian { iteration: iterations })?;
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            let trial_ll = loglik(&trial, design)?;
            if trial_ll >= ll - ROUNDING_ULPS * f64::EPSILON * ll.abs() {
                theta = trial;
                ll = trial_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            warnings.push(format!("no ascent step at iteration {iterations}"));
            break;
        }
        (grad, hess) = score_and_hessian(&theta, design)?;
    }

    let neg = -&hess;
    let (std_errors, pd) = match neg.clone().cholesky() {
        Some(ch) => {
            let inv = ch.inverse();
            (Some((0..inv.nrows()).map(|i| inv[(i, i)].sqrt()).collect()), true)
        }
        None => (None, false),
    };
    if !pd {
        warnings.push("negative Hessian is not positive definite at the estimate".into());
    }
    Ok(FitResult {
        gradient_norm: grad.amax(),
        theta_hat: theta,
        loglik: ll,
        hessian: hess.row_iter().map(|r| r.iter().copied().collect()).collect(),
        std_errors,
        iterations,
        converged,
        hessian_negative_definite: pd,
        warnings,
    })
}
