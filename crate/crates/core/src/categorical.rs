//! Categories, probability vectors, log-odds and the multinomial-logit link.
//!
//! A category takes values in `{1, …, N}`; category `N` is the reference and is
//! encoded by the zero vector of length `N − 1`, the others by canonical basis
//! vectors. Log-odds are taken against the reference category.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the sum of a [`ProbabilityVector`].
pub const SUM_TOLERANCE: f64 = 1e-12;

/// An observed category with its label set size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CategoryValue {
    index: usize,
    n: usize,
}

impl CategoryValue {
    pub fn new(index: usize, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 categories, got {n}"
            )));
        }
        if index == 0 || index > n {
            return Err(Error::InvalidArgument(format!(
                "category {index} outside 1..={n}"
            )));
        }
        Ok(Self { index, n })
    }

    /// The reference category `N`.
    pub fn reference(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    /// 1-based label.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn n_categories(&self) -> usize {
        self.n
    }

    pub fn is_reference(&self) -> bool {
        self.index == self.n
    }

    /// Length `N − 1` encoding: `e_index` or the zero vector for the reference.
    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n - 1];
        if self.index < self.n {
            v[self.index - 1] = 1.0;
        }
        v
    }
}

/// Strictly positive probabilities over all `N` categories.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbabilityVector {
    probs: Vec<f64>,
}

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidArgument(
                "probability vector needs at least 2 entries".into(),
            ));
        }
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::Domain(format!(
                "probabilities must be strictly positive and finite, found {p}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Domain(format!(
                "probabilities sum to {sum}, not 1 within {SUM_TOLERANCE:e}"
            )));
        }
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, category: CategoryValue) -> f64 {
        self.probs[category.index() - 1]
    }
}

/// Conditional log-odds `λ_k = log(p_k / p_N)`, `k = 1, …, N − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogOdds {
    values: Vec<f64>,
}

impl LogOdds {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("log-odds vector is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite log-odds {v}")));
        }
        Ok(Self { values })
    }

    pub fn zeros(n_categories: usize) -> Self {
        Self {
            values: vec![0.0; n_categories.saturating_sub(1).max(1)],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn n_categories(&self) -> usize {
        self.values.len() + 1
    }
}

/// Multinomial-logit link `F(λ)`: `F_j = e^{λ_j} / (1 + Σ_s e^{λ_s})`, `F_N = 1 / (1 + Σ_s e^{λ_s})`.
///
/// Exponentials are shifted by `max(0, λ_1, …, λ_{N−1})`.
pub fn softmax_link(lambda: &LogOdds) -> Result<ProbabilityVector> {
    let probs = softmax_probs(lambda.as_slice())?;
    if probs.iter().any(|p| *p <= 0.0) {
        return Err(Error::Domain(
            "log-odds too extreme: a probability underflows to zero".into(),
        ));
    }
    ProbabilityVector::new(probs)
}

/// Unchecked-positivity version of the link over a raw slice; returns all `N` entries.
pub(crate) fn softmax_probs(z: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite log-odds {v}")));
    }
    let shift = z.iter().copied().fold(0.0_f64, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - shift).exp()).collect();
    out.push((-shift).exp());
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Inverse link: `λ_k = log p_k − log p_N`.
pub fn inverse_link(p: &ProbabilityVector) -> Result<LogOdds> {
    let probs = p.as_slice();
    if probs.iter().any(|v| *v <= 0.0) {
        return Err(Error::Domain("inverse link needs strictly positive probabilities".into()));
    }
    let log_ref = probs[probs.len() - 1].ln();
    LogOdds::new(probs[..probs.len() - 1].iter().map(|v| v.ln() - log_ref).collect())
}

/// Inverse-CDF draw: category `j` iff `u` falls in `[P_{j−1}, P_j)` of the cumulative sums.
pub fn sample_category(p: &ProbabilityVector, u: f64) -> Result<CategoryValue> {
    let idx = sample_index(p.as_slice(), u)?;
    CategoryValue::new(idx + 1, p.len())
}

/// 0-based inverse-CDF draw from a nonnegative weight vector summing to one.
pub(crate) fn sample_index(probs: &[f64], u: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&u) {
        return Err(Error::InvalidArgument(format!("uniform draw {u} outside [0, 1)")));
    }
    let mut cum = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return Ok(i);
        }
    }
    // Rounding left u above the last partial sum; take the last category with mass.
    probs
        .iter()
        .rposition(|p| *p > 0.0)
        .ok_or_else(|| Error::Domain("distribution has no mass".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn lo(v: &[f64]) -> LogOdds {
        LogOdds::new(v.to_vec()).unwrap()
    }

    #[test]
    fn one_hot_encoding() {
        assert_eq!(CategoryValue::new(1, 3).unwrap().one_hot(), vec![1.0, 0.0]);
        assert_eq!(CategoryValue::new(3, 3).unwrap().one_hot(), vec![0.0, 0.0]);
        assert!(CategoryValue::new(0, 3).is_err());
        assert!(CategoryValue::new(4, 3).is_err());
        assert!(CategoryValue::new(1, 1).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_link(&lo(&[0.0])).unwrap();
        assert_abs_diff_eq!(p.as_slice()[0], 0.5, epsilon = 1e-15);
        let p = softmax_link(&lo(&[3f64.ln()])).unwrap();
        assert_abs_diff_eq!(p.as_slice()[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(p.as_slice()[1], 0.25, epsilon = 1e-15);
        let p = softmax_link(&lo(&[0.0, 0.0])).unwrap();
        for v in p.as_slice() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(LogOdds::new(vec![f64::NAN]).is_err());
        assert!(softmax_probs(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn inverse_link_examples() {
        let l = inverse_link(&ProbabilityVector::new(vec![0.5, 0.5]).unwrap()).unwrap();
        assert_abs_diff_eq!(l.as_slice()[0], 0.0, epsilon = 1e-15);
        let l = inverse_link(&ProbabilityVector::new(vec![0.75, 0.25]).unwrap()).unwrap();
        assert_abs_diff_eq!(l.as_slice()[0], 3f64.ln(), epsilon = 1e-14);
        let l = inverse_link(&ProbabilityVector::new(vec![0.2, 0.3, 0.5]).unwrap()).unwrap();
        assert_abs_diff_eq!(l.as_slice()[0], 0.4f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(l.as_slice()[1], 0.6f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn probability_vector_validation() {
        assert!(ProbabilityVector::new(vec![0.0, 1.0]).is_err());
        assert!(ProbabilityVector::new(vec![0.5, 0.5 + 1e-9]).is_err());
        assert!(ProbabilityVector::new(vec![1.0]).is_err());
    }

    #[test]
    fn sample_category_examples() {
        let half = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(sample_category(&half, 0.25).unwrap().index(), 1);
        assert_eq!(sample_category(&half, 0.75).unwrap().index(), 2);
        let p = ProbabilityVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(sample_category(&p, 0.45).unwrap().index(), 2);
        assert!(sample_category(&p, 1.0).is_err());
    }

    #[test]
    fn sample_category_frequencies() {
        let p = ProbabilityVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        let mut rng = crate::rng::rng_from_seed(7);
        let reps = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..reps {
            counts[sample_category(&p, rng.random()).unwrap().index() - 1] += 1;
        }
        for (c, pj) in counts.iter().zip(p.as_slice()) {
            let freq = *c as f64 / reps as f64;
            let sigma = (pj * (1.0 - pj) / reps as f64).sqrt();
            assert!((freq - pj).abs() <= 3.0 * sigma, "freq {freq} vs {pj}");
        }
    }

    fn naive_softmax(z: &[f64]) -> Vec<f64> {
        let denom = 1.0 + z.iter().map(|v| v.exp()).sum::<f64>();
        let mut out: Vec<f64> = z.iter().map(|v| v.exp() / denom).collect();
        out.push(1.0 / denom);
        out
    }

    proptest! {
        #[test]
        fn link_round_trip(z in proptest::collection::vec(-20.0f64..20.0, 1..6)) {
            let back = inverse_link(&softmax_link(&lo(&z)).unwrap()).unwrap();
            for (a, b) in z.iter().zip(back.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }
        }

        #[test]
        fn stable_matches_naive(z in proptest::collection::vec(-20.0f64..20.0, 1..6)) {
            let stable = softmax_link(&lo(&z)).unwrap();
            for (a, b) in stable.as_slice().iter().zip(naive_softmax(&z)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
