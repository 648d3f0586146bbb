//! Return-time chain `S^{(γ)}`, coupling-failure probabilities `γ*_n`, the
//! block and φ-mixing bounds built from them, and a Monte-Carlo harness that
//! couples two copies of a finite-order chain started from different pasts.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::categorical::{sample_index, softmax_probs, CategoryValue};
use crate::error::{Error, Result};
use crate::models::{eval_logodds, ModelSpec};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stability::{coupling_constants, GammaProfile};

/// Probability vectors handed to [`maximal_coupling_step`] must sum to one within this.
const DIST_TOLERANCE: f64 = 1e-9;

/// `γ*_n = P(S_n = 0)` for `n = 0, …, n_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaStar {
    pub values: Vec<f64>,
    /// Ratio `γ*_{n_max}/γ*_{n_max−1}` used to extend the sequence geometrically;
    /// present only when the γ profile declares a geometric tail.
    pub tail_ratio: Option<f64>,
}

impl GammaStar {
    pub fn n_max(&self) -> usize {
        self.values.len() - 1
    }

    /// `γ*_n`, extrapolated past `n_max` when a tail ratio is available.
    pub fn value(&self, n: usize) -> Result<f64> {
        if n <= self.n_max() {
            return Ok(self.values[n]);
        }
        match self.tail_ratio {
            Some(r) => Ok(self.values[self.n_max()] * r.powi((n - self.n_max()) as i32)),
            None => Err(Error::OutOfRange { index: n, max: self.n_max() }),
        }
    }
}

/// Law of `S_n` on `{0, …, n}` by forward recursion:
/// `P(S_{t+1} = 0) = Σ_i P(S_t = i)γ_i`, `P(S_{t+1} = i+1) = P(S_t = i)(1 − γ_i)`.
pub fn s_chain_distribution(gamma: &GammaProfile, n: usize) -> Vec<f64> {
    let mut dist = vec![1.0];
    for _ in 0..n {
        let mut next = vec![0.0; dist.len() + 1];
        for (i, p) in dist.iter().enumerate() {
            let g = gamma.value(i);
            next[0] += p * g;
            next[i + 1] += p * (1.0 - g);
        }
        dist = next;
    }
    dist
}

/// `γ*_0, …, γ*_{n_max}` by the same recursion, keeping only the mass at 0.
pub fn gamma_star(gamma: &GammaProfile, n_max: usize) -> GammaStar {
    let mut dist = vec![1.0];
    let mut values = vec![1.0];
    for _ in 0..n_max {
        let mut next = vec![0.0; dist.len() + 1];
        for (i, p) in dist.iter().enumerate() {
            let g = gamma.value(i);
            next[0] += p * g;
            next[i + 1] += p * (1.0 - g);
        }
        values.push(next[0]);
        dist = next;
    }
    let tail_ratio = gamma.tail_rate.and_then(|_| {
        let n = values.len() - 1;
        if n == 0 {
            return None;
        }
        let (prev, last) = (values[n - 1], values[n]);
        Some(if prev > 0.0 { last / prev } else { 0.0 })
    });
    GammaStar { values, tail_ratio }
}

/// `Σ_{j≥n} γ*_j`, capped at 1: the stored terms plus the geometric remainder
/// `γ*_{n_max}·r/(1 − r)`.
pub fn phi_bound(gs: &GammaStar, n: usize) -> Result<f64> {
    let r = match gs.tail_ratio {
        Some(r) if r < 1.0 => r,
        Some(r) => {
            return Err(Error::NotSummable(format!(
                "γ* does not decay (ratio γ*_n/γ*_(n−1) = {r})"
            )))
        }
        None => return Err(Error::NotSummable("γ has no declared geometric tail".into())),
    };
    let n_max = gs.n_max();
    let total = if n > n_max {
        gs.value(n)? / (1.0 - r)
    } else {
        let head: f64 = gs.values[n..].iter().sum();
        head + gs.values[n_max] * r / (1.0 - r)
    };
    Ok(total.clamp(0.0, 1.0))
}

/// `Σ_{j=0}^{k} (∏_{m<j}(1 − γ_m)) γ*_{n+k−j}`: bound on how much the law of a
/// window of `k + 1` consecutive values, `n` steps ahead, depends on the past.
pub fn block_bound(gamma: &GammaProfile, gs: &GammaStar, n: usize, k: usize) -> Result<f64> {
    let mut survive = 1.0;
    let mut total = 0.0;
    for j in 0..=k {
        total += survive * gs.value(n + k - j)?;
        survive *= 1.0 - gamma.value(j);
    }
    Ok(total)
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain("probabilities must be finite and ≥ 0".into()));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > DIST_TOLERANCE {
        return Err(Error::Domain(format!("probabilities sum to {s}")));
    }
    Ok(())
}

/// One draw from the maximal coupling of `p` and `q`.
///
/// With `w = Σ_x min(p_x, q_x)`: if `u.0 < w` both coordinates take the same
/// value drawn from `min(p, q)/w`; otherwise they are drawn from the disjoint
/// residuals `(p − min)/(1 − w)` and `(q − min)/(1 − w)`. `P(a = b) = w`, which
/// equals `1 − ½ Σ_x |p_x − q_x|`.
pub fn maximal_coupling_step(p: &[f64], q: &[f64], u: (f64, f64)) -> Result<(CategoryValue, CategoryValue)> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!("coupled laws have sizes {} and {}", p.len(), q.len())));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let n = p.len();
    let overlap: Vec<f64> = p.iter().zip(q).map(|(a, b)| a.min(*b)).collect();
    let w: f64 = overlap.iter().sum();
    let (a, b) = if u.0 < w {
        let common: Vec<f64> = overlap.iter().map(|v| v / w).collect();
        let x = sample_index(&common, u.1)?;
        (x, x)
    } else {
        let rest = 1.0 - w;
        let rp: Vec<f64> = p.iter().zip(&overlap).map(|(a, m)| (a - m) / rest).collect();
        let rq: Vec<f64> = q.iter().zip(&overlap).map(|(a, m)| (a - m) / rest).collect();
        (sample_index(&rp, u.1)?, sample_index(&rq, u.1)?)
    };
    Ok((CategoryValue::new(a + 1, n)?, CategoryValue::new(b + 1, n)?))
}

/// Outcome of [`coupling_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingReport {
    /// Empirical `P(T_n ≤ k)`, `k = 0, …, n`.
    pub t_cdf: Vec<f64>,
    /// Exact `P(S_n ≤ k)`, `k = 0, …, n`.
    pub s_cdf: Vec<f64>,
    /// Monte-Carlo slack allowed at each `k`.
    pub slack: Vec<f64>,
    pub dominated: bool,
    pub reps: usize,
}

/// Disagreement ages of one coupled run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingTrace {
    /// `ages[0]` is the age carried by the pasts, `ages[t + 1]` the age after
    /// step `t`; `None` while the two paths have never disagreed.
    pub ages: Vec<Option<usize>>,
    /// First step from which the two paths agree until the end of the run.
    pub coupled_at: Option<usize>,
}

/// Runs two copies of the chain from pasts `x_past`, `y_past` (newest-first)
/// for `n` steps, coupling their conditional laws with [`maximal_coupling_step`]
/// at every step. Once the last `order` values agree the kernels coincide and
/// the paths stay merged.
pub fn coupled_run<R: Rng>(
    model: &ModelSpec,
    x_past: &[CategoryValue],
    y_past: &[CategoryValue],
    n: usize,
    rng: &mut R,
) -> Result<CouplingTrace> {
    let order = model.y_order();
    if x_past.len() < order || y_past.len() < order {
        return Err(Error::InsufficientHistory { needed: order, got: x_past.len().min(y_past.len()) });
    }
    // a first difference at lag j gives age j − 1 at time −1
    let mut age: Option<usize> = x_past.iter().zip(y_past).position(|(a, b)| a != b);
    let mut ux: Vec<CategoryValue> = x_past[..order].to_vec();
    let mut vy: Vec<CategoryValue> = y_past[..order].to_vec();
    let mut ages = Vec::with_capacity(n + 1);
    ages.push(age);
    let mut coupled_at = if age.is_some() { Some(0) } else { None };
    for t in 0..n {
        let p = softmax_probs(eval_logodds(model, &ux, &[], None)?.as_slice())?;
        let q = softmax_probs(eval_logodds(model, &vy, &[], None)?.as_slice())?;
        let (a, b) = maximal_coupling_step(&p, &q, (rng.random(), rng.random()))?;
        if a == b {
            age = age.map(|v| v + 1);
        } else {
            age = Some(0);
            coupled_at = Some(t + 1);
        }
        ages.push(age);
        if order > 0 {
            ux.pop();
            ux.insert(0, a);
            vy.pop();
            vy.insert(0, b);
        }
    }
    if coupled_at == Some(n) && age == Some(0) {
        coupled_at = None;
    }
    Ok(CouplingTrace { ages, coupled_at })
}

/// Checks `P(T_n ≤ k) ≤ P(S_n ≤ k)` for `k = 0, …, n` across `reps` coupled
/// runs of `n` steps, with slack `3σ`, `σ = √(max(P(1−P), 1/reps)/reps)` at the exact `P = P(S_n ≤ k)`.
pub fn coupling_experiment(
    model: &ModelSpec,
    x_past: &[CategoryValue],
    y_past: &[CategoryValue],
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<CouplingReport> {
    if model.has_feedback() || model.covariate_dim() > 0 {
        return Err(Error::InvalidArgument(
            "coupling experiment needs a finite-order model without covariates".into(),
        ));
    }
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be positive".into()));
    }
    let constants = coupling_constants(model)?;
    let ages: Vec<Option<usize>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(seed, r as u64));
            coupled_run(model, x_past, y_past, n, &mut rng).map(|tr| tr.ages[n])
        })
        .collect::<Result<_>>()?;

    let mut counts = vec![0usize; n + 1];
    for t in ages.into_iter().flatten() {
        if t <= n {
            counts[t] += 1;
        }
    }
    let mut t_cdf = Vec::with_capacity(n + 1);
    let mut acc = 0usize;
    for c in &counts {
        acc += c;
        t_cdf.push(acc as f64 / reps as f64);
    }
    let dist = s_chain_distribution(&constants.gamma, n);
    let mut s_cdf = Vec::with_capacity(n + 1);
    let mut s_acc = 0.0;
    for p in &dist {
        s_acc += p;
        s_cdf.push(s_acc.min(1.0));
    }
    let slack: Vec<f64> = s_cdf
        .iter()
        .map(|p| 3.0 * ((p * (1.0 - p)).max(1.0 / reps as f64) / reps as f64).sqrt())
        .collect();
    let dominated = t_cdf.iter().zip(&s_cdf).zip(&slack).all(|((t, s), e)| *t <= s + e);
    Ok(CouplingReport { t_cdf, s_cdf, slack, dominated, reps })
}
