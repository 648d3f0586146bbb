//! Checkers for the stationarity conditions and the constants they produce.
//!
//! Finite-order models get a Lipschitz profile `(δ_j)` over lagged categories,
//! from which the lower bound `η` on conditional probabilities and the coupling
//! sequence `(γ_m)` follow. Feedback models get a contraction certificate
//! `(κ, k)` for the iterated latent recursion; its geometric decay induces a
//! profile `δ_j = C·Σ κ^{i/k}` over the lag windows containing lag `j`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{CovariateLogistic, LinearFeedback, ModelSpec, TruncatedLinear};

/// Largest power `k` tried when looking for `‖Ã^k‖ < 1`.
pub const MAX_POWER: usize = 64;

/// A spectral radius this close to 1 is treated as failing.
pub const RADIUS_MARGIN: f64 = 1e-8;

/// Difference of two distinct elements of `E` has Euclidean norm at most `√2`.
const ONE_HOT_GAP: f64 = std::f64::consts::SQRT_2;

/// Truncation point for computed coupling sequences.
const GAMMA_FLOOR: f64 = 1e-17;
const GAMMA_MAX_LEN: usize = 20_000;

/// `(δ_j)` with `‖g(x) − g(y)‖ ≤ Σ_j δ_j 1{x_j ≠ y_j}`.
///
/// When `tail_rate` is set the profile continues geometrically past the stored
/// entries: `δ_{L+i} = δ_L · r^i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzProfile {
    pub delta: Vec<f64>,
    /// `Σ_{j=1}^{L} j·δ_j` over the stored entries.
    pub weighted_sum: f64,
    pub tail_rate: Option<f64>,
}

impl LipschitzProfile {
    pub fn finite(delta: Vec<f64>) -> Result<Self> {
        if delta.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidArgument("Lipschitz constants must be finite and ≥ 0".into()));
        }
        let weighted_sum = delta.iter().enumerate().map(|(j, d)| (j + 1) as f64 * d).sum();
        Ok(Self { delta, weighted_sum, tail_rate: None })
    }

    pub fn geometric(delta: Vec<f64>, rate: f64) -> Result<Self> {
        if delta.is_empty() {
            return Err(Error::InvalidArgument("geometric profile needs at least one entry".into()));
        }
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid tail rate {rate}")));
        }
        let mut p = Self::finite(delta)?;
        p.tail_rate = Some(rate);
        Ok(p)
    }

    /// `δ_j` for `j ≥ 1`, following the geometric tail if any.
    pub fn delta_at(&self, j: usize) -> f64 {
        let len = self.delta.len();
        if j == 0 {
            return 0.0;
        }
        if j <= len {
            return self.delta[j - 1];
        }
        match self.tail_rate {
            Some(r) if len > 0 => self.delta[len - 1] * r.powi((j - len) as i32),
            _ => 0.0,
        }
    }

    /// `Σ_{j>m} δ_j`.
    pub fn tail_sum(&self, m: usize) -> f64 {
        let len = self.delta.len();
        let stored = self.delta.iter().skip(m).fold(0.0, |a, b| a + b);
        match self.tail_rate {
            Some(r) if len > 0 => {
                if r >= 1.0 {
                    return f64::INFINITY;
                }
                let last = self.delta[len - 1];
                // geometric part δ_{L+1}, δ_{L+2}, … beyond max(m, L)
                let start = m.max(len);
                stored + last * r.powi((start + 1 - len) as i32) / (1.0 - r)
            }
            _ => stored,
        }
    }
}

/// Coupling sequence `(γ_m)`; `tail_rate` extends it geometrically beyond the
/// stored values, otherwise the last value is repeated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaProfile {
    pub values: Vec<f64>,
    pub tail_rate: Option<f64>,
}

impl GammaProfile {
    pub fn new(values: Vec<f64>, tail_rate: Option<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("γ profile is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && **v < 1.0)) {
            return Err(Error::InvalidArgument(format!("γ entries must lie in [0, 1), found {v}")));
        }
        if let Some(r) = tail_rate {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidArgument(format!("γ tail rate {r} outside [0, 1)")));
            }
        }
        Ok(Self { values, tail_rate })
    }

    pub fn value(&self, m: usize) -> f64 {
        let last = self.values.len() - 1;
        if m <= last {
            return self.values[m];
        }
        match self.tail_rate {
            Some(r) => self.values[last] * r.powi((m - last) as i32),
            None => self.values[last],
        }
    }
}

/// Constants behind the coupling bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingConstants {
    /// Uniform lower bound on every conditional probability.
    pub eta: f64,
    /// Lipschitz bound of each link coordinate, `√(N−1)/4`.
    pub m_bound: f64,
    /// Bounds `B_j ≥ sup |g_j|`.
    pub logodds_bound: Vec<f64>,
    pub gamma: GammaProfile,
    pub kappa: Option<f64>,
    pub k: Option<usize>,
    pub c: Option<f64>,
}

/// Verdict of [`check_linear_feedback`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFeedbackCheck {
    pub rho: f64,
    pub pass: bool,
    pub kappa: Option<f64>,
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonlinearCheck {
    pub alpha_sum: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummabilityCheck {
    pub pass: bool,
    pub value: f64,
}

/// Contraction data for the stacked latent recursion `x ↦ G_ȳ(x)`.
///
/// * `‖G_ȳ(x) − G_ȳ(x')‖ ≤ step_lipschitz·‖x − x'‖`
/// * `‖G_ȳ(x) − G_ȳ'(x)‖ ≤ jump_lipschitz` for `ȳ ≠ ȳ'`
/// * any `k`-fold composition contracts by `kappa`
/// * `‖G_ȳ(0)‖ ≤ offset_bound`
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionCertificate {
    pub kappa: f64,
    pub k: usize,
    pub step_lipschitz: f64,
    pub jump_lipschitz: f64,
    pub offset_bound: f64,
    pub stack_dim: usize,
}

impl ContractionCertificate {
    fn step_bar(&self) -> f64 {
        self.step_lipschitz.max(1.0)
    }

    /// Per-step geometric rate `κ^{1/k}`.
    pub fn decay_rate(&self) -> f64 {
        self.kappa.powf(1.0 / self.k as f64)
    }

    /// `sup ‖H‖ ≤ offset·Σ_{i<k} L^i / (1 − κ)`.
    pub fn h_bound(&self) -> f64 {
        let block: f64 = (0..self.k).map(|i| self.step_lipschitz.powi(i as i32)).sum();
        self.offset_bound * block / (1.0 - self.kappa)
    }

    /// `C` in `‖H(ȳ) − H(ȳ')‖ ≤ C·Σ_i κ^{i/k} 1{ȳ_i ≠ ȳ'_i}`: `max(1, L)^{k−1}·J/κ`.
    pub fn c_constant(&self) -> f64 {
        self.step_bar().powi(self.k as i32 - 1) * self.jump_lipschitz / self.kappa
    }

    /// Bound on `‖G_{ȳ_1}∘…∘G_{ȳ_s}(x0) − H(ȳ)‖`.
    pub fn truncation_error(&self, depth: usize, x0_norm: f64) -> f64 {
        let blocks = (depth / self.k) as i32;
        let rest = (depth % self.k) as i32;
        self.kappa.powi(blocks) * self.step_bar().powi(rest) * (x0_norm + self.h_bound())
    }

    /// Smallest multiple of `k` (at least `k`) whose truncation error is ≤ `tol`.
    pub fn required_depth(&self, x0_norm: f64, tol: f64) -> usize {
        let scale = x0_norm + self.h_bound();
        let blocks = if scale <= tol {
            1.0
        } else {
            ((tol / scale).ln() / self.kappa.ln()).ceil().max(1.0)
        };
        let mut depth = blocks as usize * self.k;
        while self.truncation_error(depth, x0_norm) > tol {
            depth += self.k;
        }
        depth
    }
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

pub(crate) fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Block companion matrix `Ã` of `(A_1, …, A_p)`, size `(N−1)p`.
pub fn companion_matrix(model: &LinearFeedback) -> DMatrix<f64> {
    let m = model.a0.len();
    let p = model.a.len();
    let mut out = DMatrix::zeros(m * p, m * p);
    for (i, a) in model.a.iter().enumerate() {
        out.view_mut((0, i * m), (m, m)).copy_from(a);
    }
    for r in m..m * p {
        out[(r, r - m)] = 1.0;
    }
    out
}

/// `δ_j = √2·‖A_j‖₂` for finite-order models without feedback or covariates.
pub fn lipschitz_profile(model: &ModelSpec) -> Result<LipschitzProfile> {
    let mats = lag_matrices(model)?;
    LipschitzProfile::finite(mats.iter().map(|a| ONE_HOT_GAP * spectral_norm(a)).collect())
}

fn lag_matrices(model: &ModelSpec) -> Result<Vec<DMatrix<f64>>> {
    match model {
        ModelSpec::TruncatedLinear(TruncatedLinear { a, .. }) => Ok(a.clone()),
        ModelSpec::CovariateLogistic(m) if m.covariate_dim == 0 => Ok((1..=m.q).map(|l| m.lag_matrix(l)).collect()),
        ModelSpec::CovariateLogistic(_) => Err(Error::InvalidArgument(
            "covariate models have unbounded log-odds; no finite Lipschitz profile".into(),
        )),
        _ => Err(Error::InvalidArgument(format!(
            "{} has feedback; use check_linear_feedback / check_nonlinear_contraction",
            model.family()
        ))),
    }
}

fn intercept(model: &ModelSpec) -> Vec<f64> {
    match model {
        ModelSpec::TruncatedLinear(m) => m.d.as_slice().to_vec(),
        ModelSpec::CovariateLogistic(m @ CovariateLogistic { .. }) => {
            (0..m.n_categories - 1).map(|j| m.block(j)[0]).collect()
        }
        _ => unreachable!("intercept of a feedback model"),
    }
}

/// Interval bound of `|g_j|` over one-hot histories.
fn finite_logodds_bound(model: &ModelSpec) -> Result<Vec<f64>> {
    let mats = lag_matrices(model)?;
    Ok(intercept(model)
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let (mut lo, mut hi) = (*c, *c);
            for a in &mats {
                let row = a.row(j);
                lo += row.iter().copied().fold(0.0, f64::min);
                hi += row.iter().copied().fold(0.0, f64::max);
            }
            lo.abs().max(hi.abs())
        })
        .collect())
}

/// `η = e^{−max B} / (1 + Σ_s e^{B_s})`, bounding every `p(e_j|x)` and `p(0|x)` from below.
fn eta_from_bounds(bounds: &[f64]) -> Result<f64> {
    let bmax = bounds.iter().copied().fold(0.0, f64::max);
    let denom = 1.0 + bounds.iter().map(|b| b.exp()).sum::<f64>();
    let eta = (-bmax).exp() / denom;
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::Domain("η underflows to zero: log-odds bound too large".into()));
    }
    Ok(eta)
}

fn gamma_from_tails(eta: f64, m_bound: f64, tail: impl Fn(usize) -> f64, max_len: usize) -> Vec<f64> {
    let mut values = Vec::new();
    for m in 0..max_len {
        let g = (1.0 - eta).min(m_bound * tail(m) / eta);
        values.push(g);
        if g <= GAMMA_FLOOR {
            break;
        }
    }
    values
}

/// `η`, `M`, `(γ_m)` and (for feedback models) `κ`, `k`, `C`.
pub fn coupling_constants(model: &ModelSpec) -> Result<CouplingConstants> {
    let n = model.n_categories();
    let m_bound = ((n - 1) as f64).sqrt() / 4.0;
    if model.has_feedback() {
        let cert = contraction_certificate(model)?;
        let profile = feedback_lipschitz_profile(&cert, model.y_order())?;
        let b = cert.h_bound();
        let bounds = vec![b; n - 1];
        let eta = eta_from_bounds(&bounds)?;
        let values = gamma_from_tails(eta, m_bound, |m| profile.tail_sum(m), GAMMA_MAX_LEN);
        Ok(CouplingConstants {
            eta,
            m_bound,
            logodds_bound: bounds,
            gamma: GammaProfile::new(values, Some(cert.decay_rate()))?,
            kappa: Some(cert.kappa),
            k: Some(cert.k),
            c: Some(cert.c_constant()),
        })
    } else {
        let profile = lipschitz_profile(model)?;
        let bounds = finite_logodds_bound(model)?;
        let eta = eta_from_bounds(&bounds)?;
        let len = profile.delta.len() + 1;
        let mut values: Vec<f64> = (0..len)
            .map(|m| (1.0 - eta).min(m_bound * profile.tail_sum(m) / eta))
            .collect();
        // γ_m = 0 beyond the model order, which any geometric rate certifies.
        values.truncate(len);
        Ok(CouplingConstants {
            eta,
            m_bound,
            logodds_bound: bounds,
            gamma: GammaProfile::new(values, Some(0.0))?,
            kappa: None,
            k: None,
            c: None,
        })
    }
}

/// Profile over lagged categories induced by a contraction certificate:
/// lag `j` enters the windows `ȳ_i` for `i ∈ [j−q+1, j]`, so
/// `δ_j = C·Σ_{i=max(1, j−q+1)}^{j} r^i` with `r = κ^{1/k}`.
pub fn feedback_lipschitz_profile(cert: &ContractionCertificate, q: usize) -> Result<LipschitzProfile> {
    let c = cert.c_constant();
    let r = cert.decay_rate();
    let delta: Vec<f64> = (1..=q.max(1))
        .map(|j| c * (j.saturating_sub(q - 1).max(1)..=j).map(|i| r.powi(i as i32)).sum::<f64>())
        .collect();
    LipschitzProfile::geometric(delta, r)
}

/// Spectral radius of the companion matrix and, when it is below one, the
/// smallest `k ≤ 64` with `κ = ‖Ã^k‖₂ < 1`.
pub fn check_linear_feedback(model: &LinearFeedback) -> Result<LinearFeedbackCheck> {
    let a = companion_matrix(model);
    let rho = spectral_radius(&a);
    if !(rho < 1.0) || (rho - 1.0).abs() < RADIUS_MARGIN {
        return Ok(LinearFeedbackCheck { rho, pass: false, kappa: None, k: None });
    }
    let mut power = a.clone();
    for k in 1..=MAX_POWER {
        let norm = spectral_norm(&power);
        if norm < 1.0 {
            return Ok(LinearFeedbackCheck { rho, pass: true, kappa: Some(norm), k: Some(k) });
        }
        power = &power * &a;
    }
    Err(Error::ContractionFailed(format!(
        "spectral radius {rho} too close to 1: no k ≤ {MAX_POWER} with ‖Ã^k‖ < 1"
    )))
}

/// `Σ α_i < 1` for a recursion with Lipschitz coefficients `α_i` on lagged
/// log-odds and `β_i` on lagged categories.
pub fn check_nonlinear_contraction(alphas: &[f64], betas: &[f64]) -> Result<NonlinearCheck> {
    if alphas.iter().chain(betas).any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("Lipschitz coefficients must be finite and ≥ 0".into()));
    }
    let alpha_sum: f64 = alphas.iter().sum();
    Ok(NonlinearCheck { alpha_sum, pass: alpha_sum < 1.0 })
}

/// Lipschitz coefficient of the threshold recursion in `λ_{t−1}`: `max(|β_1|, |β_2|)`.
pub fn threshold_alpha(beta1: f64, beta2: f64) -> f64 {
    beta1.abs().max(beta2.abs())
}

/// `Σ_j j·δ_j` (equivalently `Σ_j Σ_{k≥j} δ_k`), in closed form for a geometric tail.
pub fn check_summability(profile: &LipschitzProfile) -> SummabilityCheck {
    match profile.tail_rate {
        Some(r) if !profile.delta.is_empty() => {
            if r >= 1.0 {
                return SummabilityCheck { pass: false, value: f64::INFINITY };
            }
            let len = profile.delta.len() as f64;
            let last = profile.delta[profile.delta.len() - 1];
            // Σ_{i≥1} (L+i)·δ_L·r^i
            let tail = last * (len * r / (1.0 - r) + r / ((1.0 - r) * (1.0 - r)));
            SummabilityCheck { pass: true, value: profile.weighted_sum + tail }
        }
        _ => SummabilityCheck { pass: true, value: profile.weighted_sum },
    }
}

/// Contraction certificate for a feedback model; errors when the stability
/// condition fails or the model has no feedback.
pub fn contraction_certificate(model: &ModelSpec) -> Result<ContractionCertificate> {
    match model {
        ModelSpec::LinearFeedback(m) => {
            let check = check_linear_feedback(m)?;
            let (Some(kappa), Some(k)) = (check.kappa, check.k) else {
                return Err(Error::ContractionFailed(format!(
                    "spectral radius of the companion matrix is {} ≥ 1",
                    check.rho
                )));
            };
            let a = companion_matrix(m);
            let b_sum = m.b.iter().map(spectral_norm).fold(0.0, |a, b| a + b);
            Ok(ContractionCertificate {
                kappa: kappa.max(f64::MIN_POSITIVE.sqrt()),
                k,
                step_lipschitz: spectral_norm(&a),
                jump_lipschitz: ONE_HOT_GAP * b_sum,
                offset_bound: m.a0.norm() + b_sum,
                stack_dim: a.nrows(),
            })
        }
        ModelSpec::ThresholdBinary(m) => {
            let alpha = threshold_alpha(m.beta1, m.beta2);
            let check = check_nonlinear_contraction(&[alpha], &[m.alpha.abs()])?;
            if !check.pass {
                return Err(Error::ContractionFailed(format!(
                    "max(|β1|, |β2|) = {alpha} ≥ 1"
                )));
            }
            Ok(ContractionCertificate {
                kappa: alpha.max(f64::MIN_POSITIVE.sqrt()),
                k: 1,
                step_lipschitz: alpha,
                jump_lipschitz: m.alpha.abs(),
                offset_bound: m.d.abs() + m.alpha.abs(),
                stack_dim: 1,
            })
        }
        _ => Err(Error::InvalidArgument(format!(
            "{} has no latent feedback to contract",
            model.family()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::categorical::{softmax_probs, CategoryValue};
    use crate::models::{eval_logodds, StateSpace};
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    const S2: f64 = std::f64::consts::SQRT_2;

    fn lf(a: &[f64]) -> LinearFeedback {
        match ModelSpec::linear_feedback(vec![0.0], a.iter().map(|v| vec![*v]).collect(), vec![vec![1.0]]).unwrap() {
            ModelSpec::LinearFeedback(m) => m,
            _ => unreachable!(),
        }
    }

    #[test]
    fn lipschitz_examples() {
        let m = ModelSpec::truncated_linear(vec![0.0], vec![vec![0.5]]).unwrap();
        let p = lipschitz_profile(&m).unwrap();
        assert_abs_diff_eq!(p.delta[0], 0.5 * S2, epsilon = 1e-14);
        assert_abs_diff_eq!(p.weighted_sum, 0.5 * S2, epsilon = 1e-14);
        // brute force over the 4 pairs of one-hot values
        let mut worst: f64 = 0.0;
        for x in 1..=2 {
            for y in 1..=2 {
                let gx = eval_logodds(&m, &[CategoryValue::new(x, 2).unwrap()], &[], None).unwrap();
                let gy = eval_logodds(&m, &[CategoryValue::new(y, 2).unwrap()], &[], None).unwrap();
                worst = worst.max((gx.as_slice()[0] - gy.as_slice()[0]).abs());
            }
        }
        assert!(worst <= p.delta[0] + 1e-15);

        let zero = ModelSpec::truncated_linear(vec![0.3, 0.1], vec![vec![0.0; 4]; 3]).unwrap();
        let p = lipschitz_profile(&zero).unwrap();
        assert!(p.delta.iter().all(|d| *d == 0.0));
        assert_eq!(p.weighted_sum, 0.0);

        let two = ModelSpec::truncated_linear(vec![0.0], vec![vec![-0.3], vec![0.1]]).unwrap();
        let p = lipschitz_profile(&two).unwrap();
        assert_abs_diff_eq!(p.weighted_sum, S2 * (0.3 + 0.2), epsilon = 1e-14);

        let fb = ModelSpec::threshold_binary(0.0, 0.5, 0.5, 1.0).unwrap();
        assert!(lipschitz_profile(&fb).is_err());
    }

    #[test]
    fn coupling_constants_examples() {
        let m = ModelSpec::truncated_linear(vec![0.0], vec![vec![0.0]]).unwrap();
        let c = coupling_constants(&m).unwrap();
        assert_abs_diff_eq!(c.eta, 0.5, epsilon = 1e-15);
        assert_eq!(c.gamma.values, vec![0.0, 0.0]);

        let m = ModelSpec::truncated_linear(vec![0.0], vec![vec![0.5]]).unwrap();
        let c = coupling_constants(&m).unwrap();
        assert_abs_diff_eq!(c.logodds_bound[0], 0.5, epsilon = 1e-15);
        let expected = (-0.5f64).exp() / (1.0 + 0.5f64.exp());
        assert_abs_diff_eq!(c.eta, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(c.eta, 0.2289, epsilon = 1e-4);
        assert_eq!(c.gamma.value(1), 0.0);
        assert!(c.gamma.values[0] < 1.0);
        assert_abs_diff_eq!(c.m_bound, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn eta_is_a_lower_bound_exhaustively() {
        let mut rng = rng_from_seed(99);
        for _ in 0..20 {
            let n = rng.random_range(2..=4usize);
            let l = rng.random_range(1..=3usize);
            let m1 = n - 1;
            let d: Vec<f64> = (0..m1).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a: Vec<Vec<f64>> = (0..l).map(|_| (0..m1 * m1).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let model = ModelSpec::truncated_linear(d, a).unwrap();
            let eta = coupling_constants(&model).unwrap().eta;
            let space = StateSpace::new(n, l).unwrap();
            for s in 0..space.size() {
                let lam = eval_logodds(&model, &space.decode(s), &[], None).unwrap();
                let min_p = softmax_probs(lam.as_slice()).unwrap().into_iter().fold(1.0, f64::min);
                assert!(min_p >= eta, "min prob {min_p} < eta {eta}");
            }
        }
    }

    #[test]
    fn gamma_satisfies_ratio_condition() {
        let mut rng = rng_from_seed(5);
        let n = 3;
        let l = 3;
        let model = ModelSpec::truncated_linear(
            vec![0.2, -0.1],
            vec![vec![0.4, -0.2, 0.1, 0.3], vec![0.2, 0.1, -0.1, 0.05], vec![0.05, 0.0, 0.02, -0.04]],
        )
        .unwrap();
        let c = coupling_constants(&model).unwrap();
        for _ in 0..1000 {
            let m = rng.random_range(0..=l);
            let x: Vec<CategoryValue> = (0..l).map(|_| CategoryValue::new(rng.random_range(1..=n), n).unwrap()).collect();
            let mut y = x.clone();
            for item in y.iter_mut().skip(m) {
                *item = CategoryValue::new(rng.random_range(1..=n), n).unwrap();
            }
            let px = softmax_probs(eval_logodds(&model, &x, &[], None).unwrap().as_slice()).unwrap();
            let py = softmax_probs(eval_logodds(&model, &y, &[], None).unwrap().as_slice()).unwrap();
            for (a, b) in px.iter().zip(&py) {
                assert!(a / b >= 1.0 - c.gamma.value(m) - 1e-12);
            }
        }
    }

    #[test]
    fn linear_feedback_examples() {
        let r = check_linear_feedback(&lf(&[0.5])).unwrap();
        assert_abs_diff_eq!(r.rho, 0.5, epsilon = 1e-12);
        assert!(r.pass);
        assert_eq!(r.k, Some(1));
        assert_abs_diff_eq!(r.kappa.unwrap(), 0.5, epsilon = 1e-12);

        let r = check_linear_feedback(&lf(&[0.5, 0.3])).unwrap();
        // largest root of x² − 0.5x − 0.3
        let root = (0.5 + (0.25f64 + 1.2).sqrt()) / 2.0;
        assert_abs_diff_eq!(r.rho, root, epsilon = 1e-10);
        assert_abs_diff_eq!(r.rho, 0.8521, epsilon = 1e-4);
        assert!(r.pass);
        assert!(r.kappa.unwrap() < 1.0);

        let r = check_linear_feedback(&lf(&[1.0])).unwrap();
        assert!(!r.pass);
        assert_abs_diff_eq!(r.rho, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn radius_too_close_to_one_errors() {
        // Jordan-like block: ρ < 1 but ‖Ã^k‖ stays ≥ 1 for all k ≤ 64.
        let m = match ModelSpec::linear_feedback(vec![0.0, 0.0], vec![vec![0.99, 50.0, 0.0, 0.99]], vec![vec![0.0; 4]]).unwrap() {
            ModelSpec::LinearFeedback(m) => m,
            _ => unreachable!(),
        };
        assert!(matches!(check_linear_feedback(&m), Err(Error::ContractionFailed(_))));
    }

    #[test]
    fn block_contraction_holds_on_random_pairs() {
        let model = lf(&[0.5, 0.3]);
        let r = check_linear_feedback(&model).unwrap();
        let a = companion_matrix(&model);
        let ak = (1..r.k.unwrap()).fold(a.clone(), |acc, _| &acc * &a);
        let mut rng = rng_from_seed(8);
        for _ in 0..100 {
            let x = nalgebra::DVector::from_fn(2, |_, _| rng.random_range(-10.0..10.0));
            let y = nalgebra::DVector::from_fn(2, |_, _| rng.random_range(-10.0..10.0));
            assert!((&ak * &x - &ak * &y).norm() <= r.kappa.unwrap() * (&x - &y).norm() + 1e-12);
        }
    }

    /// Durand–Kerner roots of `1 − Σ a_i z^i`.
    fn poly_roots(a: &[f64]) -> Vec<nalgebra::Complex<f64>> {
        type C = nalgebra::Complex<f64>;
        let p = a.len();
        // monic form: z^p + c_{p−1} z^{p−1} + … + c_0 with c from dividing by −a_p
        let lead = -a[p - 1];
        let coef = |z: C| -> C {
            let mut v = C::new(1.0, 0.0);
            for (i, ai) in a.iter().enumerate() {
                v -= z.powu(i as u32 + 1) * *ai;
            }
            v / lead
        };
        let mut roots: Vec<C> = (0..p).map(|i| C::new(0.4, 0.9).powu(i as u32)).collect();
        for _ in 0..2000 {
            for i in 0..p {
                let mut denom = C::new(1.0, 0.0);
                for j in 0..p {
                    if i != j {
                        denom *= roots[i] - roots[j];
                    }
                }
                let step = coef(roots[i]) / denom;
                roots[i] -= step;
            }
        }
        roots
    }

    #[test]
    fn companion_condition_matches_polynomial_roots() {
        let mut rng = rng_from_seed(21);
        let mut agree = 0;
        for _ in 0..200 {
            let p = rng.random_range(1..=3usize);
            let a: Vec<f64> = (0..p).map(|_| rng.random_range(-1.2..1.2)).collect();
            if a[p - 1].abs() < 1e-3 {
                continue;
            }
            let roots = poly_roots(&a);
            let outside = roots.iter().all(|r| r.norm() > 1.0);
            let min_mod = roots.iter().map(|r| r.norm()).fold(f64::INFINITY, f64::min);
            if (min_mod - 1.0).abs() < 1e-6 {
                continue;
            }
            // An error means ρ < 1 but too close to 1 for the k search.
            let pass = check_linear_feedback(&lf(&a)).map_or(true, |r| r.pass);
            assert_eq!(outside, pass, "a = {a:?}, roots = {roots:?}");
            agree += 1;
        }
        assert!(agree > 150);
    }

    #[test]
    fn nonlinear_examples() {
        let r = check_nonlinear_contraction(&[0.5], &[0.8]).unwrap();
        assert_eq!(r.alpha_sum, 0.5);
        assert!(r.pass);
        let r = check_nonlinear_contraction(&[0.6, 0.5], &[1.0]).unwrap();
        assert_abs_diff_eq!(r.alpha_sum, 1.1, epsilon = 1e-15);
        assert!(!r.pass);
        let r = check_nonlinear_contraction(&[threshold_alpha(0.5, -0.3)], &[1.0]).unwrap();
        assert_eq!(r.alpha_sum, 0.5);
        assert!(r.pass);
        assert!(check_nonlinear_contraction(&[-0.1], &[]).is_err());
    }

    #[test]
    fn threshold_lipschitz_inequality_on_random_pairs() {
        let (d, b1, b2, al) = (0.1, 0.5, -0.3, 1.0);
        let model = ModelSpec::threshold_binary(d, b1, b2, al).unwrap();
        let a1 = threshold_alpha(b1, b2);
        let mut rng = rng_from_seed(3);
        for _ in 0..1000 {
            let x: f64 = rng.random_range(-10.0..10.0);
            let xp: f64 = rng.random_range(-10.0..10.0);
            let y = CategoryValue::new(rng.random_range(1..=2), 2).unwrap();
            let yp = CategoryValue::new(rng.random_range(1..=2), 2).unwrap();
            let f = crate::models::feedback_map(&model, &[&[x]], &[y])[0];
            let fp = crate::models::feedback_map(&model, &[&[xp]], &[yp])[0];
            let dy = (y.one_hot()[0] - yp.one_hot()[0]).abs();
            assert!((f - fp).abs() <= a1 * (x - xp).abs() + al.abs() * dy + 1e-12);
        }
    }

    #[test]
    fn summability_examples() {
        let p = LipschitzProfile::finite(vec![0.5 * S2]).unwrap();
        let s = check_summability(&p);
        assert!(s.pass);
        assert_abs_diff_eq!(s.value, 0.5 * S2, epsilon = 1e-15);
        let s = check_summability(&LipschitzProfile::finite(vec![0.0, 0.0]).unwrap());
        assert!(s.pass);
        assert_eq!(s.value, 0.0);

        // δ_j = C r^j: oracle = partial sums of j·δ_j to machine precision
        let (c, r) = (1.7f64, 0.6f64);
        let head: Vec<f64> = (1..=3).map(|j| c * r.powi(j)).collect();
        let p = LipschitzProfile::geometric(head, r).unwrap();
        let mut partial = 0.0;
        for j in 1..2000 {
            partial += j as f64 * c * r.powi(j);
        }
        let s = check_summability(&p);
        assert!(s.pass);
        assert_abs_diff_eq!(s.value, partial, epsilon = 1e-12);
        // tail sum consistency
        let direct: f64 = (3..2000).map(|j| c * r.powi(j)).sum();
        assert_abs_diff_eq!(p.tail_sum(2), direct, epsilon = 1e-12);
    }

    #[test]
    fn feedback_coupling_constants() {
        let m = ModelSpec::linear_feedback(vec![-0.4], vec![vec![0.5]], vec![vec![0.8]]).unwrap();
        let c = coupling_constants(&m).unwrap();
        assert!(c.eta > 0.0 && c.eta <= 0.5);
        assert_eq!(c.k, Some(1));
        assert_abs_diff_eq!(c.kappa.unwrap(), 0.5, epsilon = 1e-12);
        let g = &c.gamma;
        assert!(g.values[0] < 1.0);
        assert!(g.values.windows(2).all(|w| w[1] <= w[0]));
        assert!(*g.values.last().unwrap() <= 1e-16);
        assert_eq!(g.tail_rate, Some(c.kappa.unwrap()));
    }

    #[test]
    fn covariate_models_have_no_eta() {
        let m = ModelSpec::covariate_logistic(2, 1, 1, vec![0.0, 0.5, 1.0]).unwrap();
        assert!(coupling_constants(&m).is_err());
        let m = ModelSpec::covariate_logistic(2, 1, 0, vec![0.1, 0.5]).unwrap();
        let c = coupling_constants(&m).unwrap();
        assert_abs_diff_eq!(c.logodds_bound[0], 0.6, epsilon = 1e-15);
    }
}
