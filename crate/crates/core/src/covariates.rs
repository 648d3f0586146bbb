//! Chains whose transition matrix is selected by an exogenous covariate:
//! Dobrushin coefficients, the positivity check on matrix products, backward
//! row limits, covariate generators and joint simulation.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{simulate, transition_matrix, ModelSpec, SeriesPath};
use crate::rng::{derive_seed, rng_from_seed};

/// Row sums of a stochastic matrix must be within this of one.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-9;

/// Cap on the number of covariate tuples tried by [`e1_check`].
pub const MAX_E1_TUPLES: usize = 10_000;

const E1_SEED: u64 = 0x00e1;

/// Covariate-indexed stochastic matrices `P_z` on a finite state space.
pub trait TransitionFamily: Sync {
    fn state_dim(&self) -> usize;

    fn covariate_dim(&self) -> usize;

    fn matrix(&self, z: &[f64]) -> Result<DMatrix<f64>>;

    /// Smallest `m` for which every `m`-fold product is known to be strictly
    /// positive, when this follows from the structure of the family.
    fn structural_order(&self) -> Option<usize> {
        None
    }
}

/// Lag-window chain of a finite-order logistic model.
#[derive(Debug, Clone)]
pub struct LogisticFamily {
    model: ModelSpec,
    state_dim: usize,
}

impl LogisticFamily {
    pub fn new(model: ModelSpec) -> Result<Self> {
        if model.has_feedback() {
            return Err(Error::InvalidArgument(format!(
                "{} has no finite-state transition family",
                model.family()
            )));
        }
        let order = model.y_order();
        if order == 0 {
            return Err(Error::InvalidArgument("transition family needs lag order ≥ 1".into()));
        }
        let space = crate::models::StateSpace::new(model.n_categories(), order)?;
        Ok(Self { model, state_dim: space.size() })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }
}

impl TransitionFamily for LogisticFamily {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn covariate_dim(&self) -> usize {
        self.model.covariate_dim()
    }

    fn matrix(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        transition_matrix(&self.model, Some(z))
    }

    fn structural_order(&self) -> Option<usize> {
        Some(self.model.y_order())
    }
}

/// The same matrix for every covariate value.
#[derive(Debug, Clone)]
pub struct ConstantFamily {
    matrix: DMatrix<f64>,
}

impl ConstantFamily {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        check_stochastic(&matrix)?;
        Ok(Self { matrix })
    }
}

impl TransitionFamily for ConstantFamily {
    fn state_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn covariate_dim(&self) -> usize {
        0
    }

    fn matrix(&self, _z: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.matrix.clone())
    }
}

/// User-supplied `z ↦ P_z`. Every matrix it returns is validated.
pub struct FnFamily<F> {
    state_dim: usize,
    covariate_dim: usize,
    f: F,
}

impl<F> FnFamily<F>
where
    F: Fn(&[f64]) -> DMatrix<f64> + Sync,
{
    pub fn new(state_dim: usize, covariate_dim: usize, f: F) -> Self {
        Self { state_dim, covariate_dim, f }
    }
}

impl<F> TransitionFamily for FnFamily<F>
where
    F: Fn(&[f64]) -> DMatrix<f64> + Sync,
{
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    fn matrix(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let p = (self.f)(z);
        if p.nrows() != self.state_dim {
            return Err(Error::Dimension(format!(
                "family returned a {}×{} matrix, expected {}",
                p.nrows(),
                p.ncols(),
                self.state_dim
            )));
        }
        check_stochastic(&p)?;
        Ok(p)
    }
}

pub fn check_stochastic(p: &DMatrix<f64>) -> Result<()> {
    if p.nrows() != p.ncols() || p.nrows() == 0 {
        return Err(Error::NotStochastic(format!("matrix is {}×{}", p.nrows(), p.ncols())));
    }
    for (i, row) in p.row_iter().enumerate() {
        if row.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::NotStochastic(format!("row {i} has a negative or non-finite entry")));
        }
        let s = row.sum();
        if (s - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(Error::NotStochastic(format!("row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// `c(P) = ½ max_{x,y} Σ_s |P(x,s) − P(y,s)|`.
pub fn dobrushin(p: &DMatrix<f64>) -> Result<f64> {
    check_stochastic(p)?;
    Ok(dobrushin_unchecked(p))
}

fn dobrushin_unchecked(p: &DMatrix<f64>) -> f64 {
    let n = p.nrows();
    let mut worst: f64 = 0.0;
    for x in 0..n {
        for y in x + 1..n {
            let d: f64 = (0..n).map(|s| (p[(x, s)] - p[(y, s)]).abs()).sum();
            worst = worst.max(0.5 * d);
        }
    }
    worst.min(1.0)
}

/// Outcome of [`e1_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct E1Report {
    pub pass: bool,
    /// Smallest entry over all tested products.
    pub min_entry: f64,
    pub tuples_tested: usize,
    /// Whether every `m`-tuple of the samples was tried.
    pub exhaustive: bool,
    /// For families with a known structural order: whether `m` reaches it.
    pub structural: Option<bool>,
}

/// Checks that products `P_{z_1}⋯P_{z_m}` have strictly positive entries over
/// `m`-tuples drawn from `z_samples`: all tuples when there are at most
/// [`MAX_E1_TUPLES`], otherwise that many random ones.
pub fn e1_check(family: &dyn TransitionFamily, z_samples: &[Vec<f64>], m: usize) -> Result<E1Report> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    if z_samples.is_empty() {
        return Err(Error::InvalidArgument("no covariate samples".into()));
    }
    let mats: Vec<DMatrix<f64>> = z_samples.iter().map(|z| family.matrix(z)).collect::<Result<_>>()?;
    let k = mats.len();
    let total = (k as f64).powi(m as i32);
    let exhaustive = total <= MAX_E1_TUPLES as f64;

    let product = |tuple: &[usize]| {
        tuple[1..].iter().fold(mats[tuple[0]].clone(), |acc, i| acc * &mats[*i])
    };
    let mut min_entry = f64::INFINITY;
    let mut tested = 0usize;
    if exhaustive {
        let mut tuple = vec![0usize; m];
        loop {
            min_entry = min_entry.min(product(&tuple).min());
            tested += 1;
            // odometer increment
            let mut pos = 0;
            while pos < m {
                tuple[pos] += 1;
                if tuple[pos] < k {
                    break;
                }
                tuple[pos] = 0;
                pos += 1;
            }
            if pos == m {
                break;
            }
        }
    } else {
        let mut rng = rng_from_seed(E1_SEED);
        let idx: Vec<usize> = (0..k).collect();
        for _ in 0..MAX_E1_TUPLES {
            let tuple: Vec<usize> = (0..m).map(|_| *idx.choose(&mut rng).expect("non-empty")).collect();
            min_entry = min_entry.min(product(&tuple).min());
            tested += 1;
        }
    }
    Ok(E1Report {
        pass: min_entry > 0.0,
        min_entry,
        tuples_tested: tested,
        exhaustive,
        structural: family.structural_order().map(|q| m >= q),
    })
}

/// Result of [`backward_row_limit`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackwardLimit {
    /// First row of `P_{z_{t−s+1}}⋯P_{z_t}`.
    pub row: Vec<f64>,
    /// Number of matrices `s` in the product.
    pub depth: usize,
    /// Product of the Dobrushin coefficients of the blocks; rows of the
    /// product differ by at most twice this in total variation.
    pub certificate: f64,
}

/// Multiplies `P_{z_{t−s+1}}⋯P_{z_t}` backward from the newest covariate
/// (last entry of `z_path`), in blocks of the family's structural order (or
/// single matrices), until the product of block coefficients is `≤ tol/2`.
pub fn backward_row_limit(
    family: &dyn TransitionFamily,
    z_path: &[Vec<f64>],
    tol: f64,
    max_depth: usize,
) -> Result<BackwardLimit> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let block = family.structural_order().unwrap_or(1).max(1);
    let limit = max_depth.min(z_path.len());
    let mut product = DMatrix::<f64>::identity(family.state_dim(), family.state_dim());
    let mut certificate = 1.0;
    let mut depth = 0;
    while depth + block <= limit {
        let mut b = DMatrix::<f64>::identity(family.state_dim(), family.state_dim());
        for i in 0..block {
            let z = &z_path[z_path.len() - 1 - depth - i];
            b = family.matrix(z)? * b;
        }
        certificate *= dobrushin_unchecked(&b);
        product = b * product;
        depth += block;
        if certificate <= tol / 2.0 {
            let row: Vec<f64> = product.row(0).iter().copied().collect();
            let s: f64 = row.iter().sum();
            return Ok(BackwardLimit { row: row.iter().map(|v| v / s).collect(), depth, certificate });
        }
    }
    Err(Error::CertificateNotReached { achieved: certificate, depth })
}

/// Kinds of covariate process with a known mixing property.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    /// `Z_t ~ N(0, 1)` independently.
    IidGaussian,
    /// `Z_t = φ Z_{t−1} + σ ε_t`, started from its stationary law.
    GaussianAr1 { phi: f64, sigma: f64 },
    /// `Z_t = (ε_t + ⋯ + ε_{t−w+1}) / √w` for i.i.d. standard normal `ε`.
    BernoulliShift { window: usize },
}

/// Covariate process generator. Coordinates of `Z_t` are independent copies
/// of the chosen scalar process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovariateGenerator {
    pub kind: GeneratorKind,
    pub mixing_certified: bool,
}

impl CovariateGenerator {
    pub fn iid_gaussian() -> Self {
        Self { kind: GeneratorKind::IidGaussian, mixing_certified: true }
    }

    pub fn gaussian_ar1(phi: f64, sigma: f64) -> Result<Self> {
        if !(phi.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!("AR(1) needs |phi| < 1, got {phi}")));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { kind: GeneratorKind::GaussianAr1 { phi, sigma }, mixing_certified: true })
    }

    pub fn bernoulli_shift(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidArgument("window must be at least 1".into()));
        }
        Ok(Self { kind: GeneratorKind::BernoulliShift { window }, mixing_certified: true })
    }

    /// `n` covariate vectors of dimension `dim`.
    pub fn generate(&self, n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        let mut out = vec![vec![0.0; dim]; n];
        for c in 0..dim {
            let series = self.scalar_series(n, &mut rng);
            for (row, v) in out.iter_mut().zip(series) {
                row[c] = v;
            }
        }
        out
    }

    fn scalar_series<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let mut normal = || -> f64 { rng.sample(StandardNormal) };
        match self.kind {
            GeneratorKind::IidGaussian => (0..n).map(|_| normal()).collect(),
            GeneratorKind::GaussianAr1 { phi, sigma } => {
                let mut z = sigma / (1.0 - phi * phi).sqrt() * normal();
                (0..n)
                    .map(|t| {
                        if t > 0 {
                            z = phi * z + sigma * normal();
                        }
                        z
                    })
                    .collect()
            }
            GeneratorKind::BernoulliShift { window } => {
                let eps: Vec<f64> = (0..n + window - 1).map(|_| normal()).collect();
                let scale = (window as f64).sqrt();
                eps.windows(window).map(|w| w.iter().sum::<f64>() / scale).collect()
            }
        }
    }
}

/// Writes covariates as CSV with header `t,z_1,…,z_d`.
pub fn write_covariates_csv<W: Write>(w: W, z: &[Vec<f64>]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let dim = z.first().map_or(0, |r| r.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=dim).map(|k| format!("z_{k}")));
    wtr.write_record(&header)?;
    for (t, row) in z.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads covariates written by [`write_covariates_csv`]; the `t` column is ignored.
pub fn read_covariates_csv<R: Read>(r: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("z_"))
        .map(|(i, _)| i)
        .collect();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = cols
            .iter()
            .map(|i| {
                rec[*i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad covariate {:?}: {e}", &rec[*i])))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}

/// Simulates the covariate path first, then the response given it. The
/// covariates use seed `derive_seed(seed, 1)` and the response
/// `derive_seed(seed, 2)`, so `Z` never depends on `Y`.
pub fn simulate_joint(
    gen: &CovariateGenerator,
    model: &ModelSpec,
    n: usize,
    burn_in: usize,
    seed: u64,
) -> Result<SeriesPath> {
    if !matches!(model, ModelSpec::CovariateLogistic(_)) {
        return Err(Error::InvalidArgument(format!(
            "joint simulation needs a covariate_logistic model, got {}",
            model.family()
        )));
    }
    if !gen.mixing_certified {
        return Err(Error::InvalidArgument("covariate generator is not certified mixing".into()));
    }
    let z = gen.generate(n + burn_in, model.covariate_dim(), derive_seed(seed, 1));
    let mut path = simulate(model, n, burn_in, None, derive_seed(seed, 2), Some(&z))?;
    path.seed = seed;
    if path.z.is_none() {
        path.z = Some(z[burn_in..].to_vec());
    }
    Ok(path)
}

/// Independent replicates of [`simulate_joint`], replicate `r` seeded with `derive_seed(seed, r)`.
pub fn simulate_joint_replicates(
    gen: &CovariateGenerator,
    model: &ModelSpec,
    n: usize,
    burn_in: usize,
    seed: u64,
    reps: usize,
) -> Result<Vec<SeriesPath>> {
    (0..reps)
        .into_par_iter()
        .map(|r| simulate_joint(gen, model, n, burn_in, derive_seed(seed, r as u64)))
        .collect()
}

/// `Σ_i log P_{z_i}(y_{i−1}, y_i)` for states `y_0, …, y_n` and covariates
/// `z_1, …, z_n` (`z_path[i − 1]` drives the transition into `y_i`).
pub fn conditional_loglik(family: &dyn TransitionFamily, y_states: &[usize], z_path: &[Vec<f64>]) -> Result<f64> {
    if y_states.is_empty() {
        return Err(Error::InvalidArgument("state path is empty".into()));
    }
    if z_path.len() != y_states.len() - 1 {
        return Err(Error::Dimension(format!(
            "{} transitions but {} covariate rows",
            y_states.len() - 1,
            z_path.len()
        )));
    }
    let dim = family.state_dim();
    if let Some(s) = y_states.iter().find(|s| **s >= dim) {
        return Err(Error::OutOfRange { index: *s, max: dim - 1 });
    }
    let mut total = 0.0;
    for (i, z) in z_path.iter().enumerate() {
        let p = family.matrix(z)?[(y_states[i], y_states[i + 1])];
        if p <= 0.0 {
            return Err(Error::ImpossiblePath { step: i + 1 });
        }
        total += p.ln();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::StateSpace;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn random_stochastic<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
        let mut p = DMatrix::from_fn(n, n, |_, _| {
            let u: f64 = rng.random();
            // occasional exact zeros
            if u < 0.1 { 0.0 } else { u }
        });
        for mut row in p.row_iter_mut() {
            if row.sum() == 0.0 {
                row[0] = 1.0;
            }
            let s = row.sum();
            row /= s;
        }
        p
    }

    fn random_dist<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
        let v = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let s = v.sum();
        v / s
    }

    fn stationary(p: &DMatrix<f64>) -> Vec<f64> {
        // left eigenvector for eigenvalue 1 via the null space of (Pᵀ − I)
        let n = p.nrows();
        let a = p.transpose() - DMatrix::<f64>::identity(n, n);
        let svd = a.svd(true, true);
        let v_t = svd.v_t.unwrap();
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let v: Vec<f64> = v_t.row(idx).iter().copied().collect();
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    }

    fn logistic_q(q: usize) -> LogisticFamily {
        // N = 2, d_z = 1: theta = (c, Γ_1..Γ_q, Δ)
        let mut theta = vec![0.2];
        theta.extend((0..q).map(|l| 0.7 - 0.4 * l as f64));
        theta.push(1.0);
        LogisticFamily::new(ModelSpec::covariate_logistic(2, q, 1, theta).unwrap()).unwrap()
    }

    #[test]
    fn dobrushin_examples() {
        assert_eq!(dobrushin(&DMatrix::identity(2, 2)).unwrap(), 1.0);
        let eq = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.3, 0.7]);
        assert_eq!(dobrushin(&eq).unwrap(), 0.0);
        let p = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let direct = 0.5 * ((0.9f64 - 0.2).abs() + (0.1f64 - 0.8).abs());
        assert_abs_diff_eq!(dobrushin(&p).unwrap(), direct, epsilon = 1e-15);
        assert_abs_diff_eq!(direct, 0.7, epsilon = 1e-15);
        assert!(dobrushin(&DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.2, 0.8])).is_err());
        assert!(dobrushin(&DMatrix::from_row_slice(2, 2, &[1.1, -0.1, 0.2, 0.8])).is_err());
    }

    #[test]
    fn dobrushin_properties_random() {
        let mut rng = rng_from_seed(99);
        for i in 0..1000 {
            let n = 2 + i % 5;
            let p = random_stochastic(n, &mut rng);
            let q = random_stochastic(n, &mut rng);
            let (cp, cq) = (dobrushin(&p).unwrap(), dobrushin(&q).unwrap());
            assert!(dobrushin_unchecked(&(&p * &q)) <= cp * cq + 1e-12);
            assert!(cp <= 1.0 - n as f64 * p.min() + 1e-12);
            let (mu, nu) = (random_dist(n, &mut rng), random_dist(n, &mut rng));
            let lhs = (p.transpose() * &mu - p.transpose() * &nu).abs().sum();
            assert!(lhs <= cp * (&mu - &nu).abs().sum() + 1e-12);
        }
    }

    #[test]
    fn e1_examples() {
        let z: Vec<Vec<f64>> = vec![vec![-1.0], vec![0.0], vec![2.5]];
        let r = e1_check(&logistic_q(1), &z, 1).unwrap();
        assert!(r.pass && r.exhaustive);
        assert_eq!(r.tuples_tested, 3);
        assert_eq!(r.structural, Some(true));

        let f2 = logistic_q(2);
        let r1 = e1_check(&f2, &z, 1).unwrap();
        assert!(!r1.pass);
        assert_eq!(r1.min_entry, 0.0);
        assert_eq!(r1.structural, Some(false));
        let r2 = e1_check(&f2, &z, 2).unwrap();
        assert!(r2.pass && r2.min_entry > 0.0);
        assert_eq!(r2.tuples_tested, 9);

        // an absorbing state keeps a zero in every product
        let absorbing = ConstantFamily::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.4, 0.6])).unwrap();
        for m in 1..5 {
            let r = e1_check(&absorbing, &[vec![]], m).unwrap();
            assert!(!r.pass);
            assert_eq!(r.min_entry, 0.0);
        }
    }

    #[test]
    fn e1_samples_when_tuples_exceed_cap() {
        let z: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 10.0 - 1.5]).collect();
        let r = e1_check(&logistic_q(2), &z, 3).unwrap();
        assert!(!r.exhaustive);
        assert_eq!(r.tuples_tested, MAX_E1_TUPLES);
        assert!(r.pass);
    }

    #[test]
    fn backward_limit_constant_matches_eigenvector() {
        let p = DMatrix::from_row_slice(3, 3, &[0.5, 0.3, 0.2, 0.1, 0.6, 0.3, 0.3, 0.3, 0.4]);
        let fam = ConstantFamily::new(p.clone()).unwrap();
        let z = vec![vec![]; 500];
        let lim = backward_row_limit(&fam, &z, 1e-10, 500).unwrap();
        assert!(lim.certificate <= 5e-11);
        for (a, b) in lim.row.iter().zip(stationary(&p)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn backward_limit_equal_rows() {
        let p = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.3, 0.7]);
        let lim = backward_row_limit(&ConstantFamily::new(p).unwrap(), &[vec![]], 1e-8, 10).unwrap();
        assert_eq!(lim.depth, 1);
        assert_eq!(lim.certificate, 0.0);
        assert_abs_diff_eq!(lim.row[0], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn backward_limit_alternating() {
        let p = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.4, 0.6]);
        let q = DMatrix::from_row_slice(2, 2, &[0.2, 0.8, 0.7, 0.3]);
        let (pc, qc) = (p.clone(), q.clone());
        let fam = FnFamily::new(2, 1, move |z: &[f64]| if z[0] < 0.5 { pc.clone() } else { qc.clone() });
        // newest-last path ending in Q: product is …(PQ)(PQ)
        let z: Vec<Vec<f64>> = (0..200).map(|t| vec![(t % 2) as f64]).collect();
        let lim = backward_row_limit(&fam, &z, 1e-10, 200).unwrap();
        let pi = stationary(&(&p * &q));
        for (a, b) in lim.row.iter().zip(&pi) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn backward_limit_fails_without_contraction() {
        let fam = ConstantFamily::new(DMatrix::identity(2, 2)).unwrap();
        match backward_row_limit(&fam, &vec![vec![]; 10], 1e-6, 10) {
            Err(Error::CertificateNotReached { achieved, depth }) => {
                assert_eq!(achieved, 1.0);
                assert_eq!(depth, 10);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn backward_limit_logistic_blocks() {
        let fam = logistic_q(2);
        let z = CovariateGenerator::iid_gaussian().generate(400, 1, 3);
        let lim = backward_row_limit(&fam, &z, 1e-9, 400).unwrap();
        assert_eq!(lim.depth % 2, 0);
        assert!((lim.row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // the same product computed directly has nearly equal rows
        let mut prod = DMatrix::<f64>::identity(4, 4);
        for zt in &z[z.len() - lim.depth..] {
            prod *= fam.matrix(zt).unwrap();
        }
        for r in 0..4 {
            let d: f64 = (0..4).map(|c| (prod[(r, c)] - lim.row[c]).abs()).sum();
            assert!(d <= 1e-9);
        }
    }

    #[test]
    fn loglik_examples() {
        let p = DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.5, 0.5]);
        let fam = ConstantFamily::new(p).unwrap();
        assert_abs_diff_eq!(conditional_loglik(&fam, &[0, 0], &[vec![]]).unwrap(), 0.75f64.ln(), epsilon = 1e-15);
        let half = ConstantFamily::new(DMatrix::from_element(2, 2, 0.5)).unwrap();
        let states = [0, 1, 1, 0, 1, 0];
        assert_abs_diff_eq!(
            conditional_loglik(&half, &states, &vec![vec![]; 5]).unwrap(),
            5.0 * 0.5f64.ln(),
            epsilon = 1e-13
        );
        let zero = ConstantFamily::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5])).unwrap();
        assert!(matches!(
            conditional_loglik(&zero, &[1, 0, 1], &[vec![], vec![]]),
            Err(Error::ImpossiblePath { step: 2 })
        ));
        assert!(conditional_loglik(&half, &[0, 1], &[]).is_err());
    }

    #[test]
    fn loglik_matches_direct_product() {
        let fam = logistic_q(1);
        let gen = CovariateGenerator::iid_gaussian();
        let z = gen.generate(50, 1, 8);
        let mut rng = rng_from_seed(5);
        let states: Vec<usize> = (0..51).map(|_| rng.random_range(0..2)).collect();
        // product in chunks to stay away from underflow, then log
        let mut log_total = 0.0f64;
        for chunk in (0..50).collect::<Vec<_>>().chunks(10) {
            let prod: f64 = chunk.iter().map(|i| fam.matrix(&z[*i]).unwrap()[(states[*i], states[*i + 1])]).product();
            log_total += prod.ln();
        }
        assert_abs_diff_eq!(conditional_loglik(&fam, &states, &z).unwrap(), log_total, epsilon = 1e-10);
    }

    #[test]
    fn generators_validate_and_are_reproducible() {
        assert!(CovariateGenerator::gaussian_ar1(1.0, 1.0).is_err());
        assert!(CovariateGenerator::gaussian_ar1(0.5, 0.0).is_err());
        assert!(CovariateGenerator::bernoulli_shift(0).is_err());
        let g = CovariateGenerator::bernoulli_shift(4).unwrap();
        assert_eq!(g.generate(100, 2, 1), g.generate(100, 2, 1));
        assert_ne!(g.generate(100, 2, 1), g.generate(100, 2, 2));
    }

    #[test]
    fn generator_moments() {
        let n = 200_000;
        for g in [
            CovariateGenerator::iid_gaussian(),
            CovariateGenerator::gaussian_ar1(0.5, 1.0).unwrap(),
            CovariateGenerator::bernoulli_shift(3).unwrap(),
        ] {
            let z: Vec<f64> = g.generate(n, 1, 11).into_iter().map(|r| r[0]).collect();
            let mean = z.iter().sum::<f64>() / n as f64;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let target = match g.kind {
                GeneratorKind::GaussianAr1 { phi, sigma } => sigma * sigma / (1.0 - phi * phi),
                _ => 1.0,
            };
            assert!(mean.abs() < 0.03, "{g:?} mean {mean}");
            assert!((var - target).abs() < 0.05 * target, "{g:?} var {var}");
        }
    }

    #[test]
    fn covariate_csv_round_trip() {
        let z = CovariateGenerator::iid_gaussian().generate(20, 3, 4);
        let mut buf = Vec::new();
        write_covariates_csv(&mut buf, &z).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t,z_1,z_2,z_3\n"));
        assert_eq!(read_covariates_csv(buf.as_slice()).unwrap(), z);
    }

    /// Probabilists' Gauss–Hermite rule from the eigen-decomposition of the Jacobi matrix.
    fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
        let j = DMatrix::from_fn(n, n, |r, c| if r + 1 == c || c + 1 == r { (r.max(c) as f64).sqrt() } else { 0.0 });
        let eig = j.symmetric_eigen();
        let nodes = eig.eigenvalues.iter().copied().collect();
        let weights = (0..n).map(|i| eig.eigenvectors[(0, i)].powi(2)).collect();
        (nodes, weights)
    }

    fn logistic_normal_mean(c: f64, delta: f64) -> f64 {
        let (x, w) = gauss_hermite(40);
        x.iter().zip(&w).map(|(x, w)| w / (1.0 + (-(c + delta * x)).exp())).sum()
    }

    #[test]
    fn joint_frequency_matches_quadrature() {
        let n = 100_000;
        for (c, delta) in [(0.0, 1.0), (0.4, 1.5)] {
            let model = ModelSpec::covariate_logistic(2, 1, 1, vec![c, 0.0, delta]).unwrap();
            let path = simulate_joint(&CovariateGenerator::iid_gaussian(), &model, n, 100, 21).unwrap();
            let freq = path.frequencies(2)[0];
            let target = logistic_normal_mean(c, delta);
            let sigma = (target * (1.0 - target) / n as f64).sqrt();
            assert!((freq - target).abs() < 3.0 * sigma, "c={c}: {freq} vs {target}");
        }
        assert_abs_diff_eq!(logistic_normal_mean(0.0, 1.0), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn joint_zero_covariate_effect_matches_plain_model() {
        let n = 50_000;
        let with_z = ModelSpec::covariate_logistic(3, 1, 1, vec![0.2, 0.5, -0.3, 0.0, -0.1, 0.4, 0.6, 0.0]).unwrap();
        let plain = ModelSpec::covariate_logistic(3, 1, 0, vec![0.2, 0.5, -0.3, -0.1, 0.4, 0.6]).unwrap();
        let a = simulate_joint(&CovariateGenerator::iid_gaussian(), &with_z, n, 100, 1).unwrap();
        let b = simulate(&plain, n, 100, None, 2, None).unwrap();
        for (fa, fb) in a.frequencies(3).iter().zip(b.frequencies(3)) {
            // dependent series: allow a generous multiple of the iid sigma
            assert!((fa - fb).abs() < 0.02, "{fa} vs {fb}");
        }
    }

    #[test]
    fn ar1_with_zero_phi_matches_iid() {
        let n = 50_000;
        let model = ModelSpec::covariate_logistic(2, 1, 1, vec![0.1, 0.8, 1.2]).unwrap();
        let a = simulate_joint(&CovariateGenerator::iid_gaussian(), &model, n, 100, 3).unwrap();
        let b = simulate_joint(&CovariateGenerator::gaussian_ar1(0.0, 1.0).unwrap(), &model, n, 100, 4).unwrap();
        assert!((a.frequencies(2)[0] - b.frequencies(2)[0]).abs() < 0.02);
    }

    #[test]
    fn joint_ergodic_averages_agree_across_seeds() {
        let model = ModelSpec::covariate_logistic(3, 2, 1, {
            let mut t = vec![0.0; 2 * (1 + 4 + 1)];
            t.iter_mut().enumerate().for_each(|(i, v)| *v = ((i * 7 % 11) as f64 - 5.0) / 8.0);
            t
        })
        .unwrap();
        let gen = CovariateGenerator::gaussian_ar1(0.6, 0.8).unwrap();
        let paths = simulate_joint_replicates(&gen, &model, 100_000, 200, 77, 3).unwrap();
        for j in 0..3 {
            let f: Vec<f64> = paths.iter().map(|p| p.frequencies(3)[j]).collect();
            let spread = f.iter().cloned().fold(f64::MIN, f64::max) - f.iter().cloned().fold(f64::MAX, f64::min);
            assert!(spread < 0.01, "category {j}: {f:?}");
        }
    }

    #[test]
    fn joint_rejects_other_families() {
        let m = ModelSpec::truncated_linear(vec![0.0], vec![vec![0.5]]).unwrap();
        assert!(simulate_joint(&CovariateGenerator::iid_gaussian(), &m, 10, 0, 1).is_err());
    }

    #[test]
    fn lift_path_loglik_consistency() {
        let model = ModelSpec::covariate_logistic(2, 2, 1, vec![0.1, 0.5, -0.4, 0.9]).unwrap();
        let path = simulate_joint(&CovariateGenerator::iid_gaussian(), &model, 200, 10, 6).unwrap();
        let space = StateSpace::new(2, 2).unwrap();
        let states = space.lift(&path.y);
        let z = path.z.as_ref().unwrap();
        let fam = LogisticFamily::new(model).unwrap();
        assert!(conditional_loglik(&fam, &states, &z[2..]).unwrap().is_finite());
    }
}
