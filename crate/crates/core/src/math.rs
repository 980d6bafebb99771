//! Numerically stable primitives over logit vectors and probability
//! distributions.
//!
//! All logarithms are natural, so every divergence and entropy is in nats.
//! Divergences between two logit streams are computed in log space from
//! [`log_softmax`] outputs, which keeps them finite for any finite logits.

use serde::{Deserialize, Serialize};

use crate::error::MathError;

/// Tolerance on `sum(p) - 1` accepted by [`ProbDist::new`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Max-abs difference under which two distributions are considered equal.
pub const EQUALITY_TOLERANCE: f64 = 1e-12;

/// Dense real-valued scores over the vocabulary at one decode step.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self, MathError> {
        if values.is_empty() {
            return Err(MathError::Empty);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(MathError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn zeros(vocab_size: usize) -> Self {
        Self(vec![0.0; vocab_size.max(1)])
    }

    pub fn vocab_size(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn ensure_same_size(&self, other: &Self) -> Result<(), MathError> {
        check_dims(self.vocab_size(), other.vocab_size())
    }
}

impl<'de> Deserialize<'de> for LogitVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        LogitVector::new(values).map_err(serde::de::Error::custom)
    }
}

/// Normalized distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    pub fn new(probs: Vec<f64>) -> Result<Self, MathError> {
        if probs.is_empty() {
            return Err(MathError::Empty);
        }
        for (index, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(MathError::NonFinite { index });
            }
            if p < 0.0 {
                return Err(MathError::NegativeProbability { index, value: p });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(MathError::NotNormalized { sum });
        }
        Ok(Self(probs))
    }

    pub fn uniform(vocab_size: usize) -> Self {
        let n = vocab_size.max(1);
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(vocab_size: usize, index: usize) -> Self {
        let mut probs = vec![0.0; vocab_size.max(index + 1)];
        probs[index] = 1.0;
        Self(probs)
    }

    pub fn vocab_size(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64, MathError> {
        check_dims(self.vocab_size(), other.vocab_size())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

fn check_dims(left: usize, right: usize) -> Result<(), MathError> {
    if left != right {
        return Err(MathError::DimensionMismatch { left, right });
    }
    Ok(())
}

/// `ln(sum(exp(x)))` with max subtraction.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax(logits: &LogitVector) -> ProbDist {
    let max = logits.max();
    let exps: Vec<f64> = logits.0.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    ProbDist(exps.into_iter().map(|e| e / sum).collect())
}

pub fn log_softmax(logits: &LogitVector) -> Vec<f64> {
    let max = logits.max();
    let log_sum = logits.0.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.0.iter().map(|v| (v - max) - log_sum).collect()
}

/// `D_KL(p || q)` in nats. Terms with `p_i = 0` contribute nothing; a term
/// with `p_i > 0` and `q_i = 0` makes the result `+inf`.
pub fn kl_divergence(p: &ProbDist, q: &ProbDist) -> Result<f64, MathError> {
    check_dims(p.vocab_size(), q.vocab_size())?;
    let mut total = 0.0;
    for (&pi, &qi) in p.0.iter().zip(&q.0) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += pi * (pi.ln() - qi.ln());
    }
    Ok(total.max(0.0))
}

pub fn symmetric_kl(p: &ProbDist, q: &ProbDist) -> Result<f64, MathError> {
    Ok((kl_divergence(p, q)? + kl_divergence(q, p)?) / 2.0)
}

pub fn js_divergence(p: &ProbDist, q: &ProbDist) -> Result<f64, MathError> {
    check_dims(p.vocab_size(), q.vocab_size())?;
    let mixture = ProbDist(p.0.iter().zip(&q.0).map(|(a, b)| (a + b) / 2.0).collect());
    let js = 0.5 * kl_divergence(p, &mixture)? + 0.5 * kl_divergence(q, &mixture)?;
    Ok(js.clamp(0.0, std::f64::consts::LN_2))
}

pub fn entropy(p: &ProbDist) -> f64 {
    let h: f64 = p.0.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    h.max(0.0)
}

/// Divergence profile between two logit streams, computed in log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamDivergence {
    pub kl_forward: f64,
    pub kl_reverse: f64,
    pub js: f64,
    pub entropy_first: f64,
    pub entropy_second: f64,
}

impl StreamDivergence {
    /// Compares `softmax(first)` against `softmax(second)`.
    pub fn between(first: &LogitVector, second: &LogitVector) -> Result<Self, MathError> {
        first.ensure_same_size(second)?;
        let lp = log_softmax(first);
        let lq = log_softmax(second);
        let mut kl_forward = 0.0;
        let mut kl_reverse = 0.0;
        let mut js = 0.0;
        let mut entropy_first = 0.0;
        let mut entropy_second = 0.0;
        for (&a, &b) in lp.iter().zip(&lq) {
            let (p, q) = (a.exp(), b.exp());
            kl_forward += p * (a - b);
            kl_reverse += q * (b - a);
            entropy_first -= p * a;
            entropy_second -= q * b;
            // ln m = ln((p + q) / 2), evaluated without leaving log space
            let hi = a.max(b);
            let log_m = hi + ((a - hi).exp() + (b - hi).exp()).ln() - std::f64::consts::LN_2;
            js += 0.5 * (p * (a - log_m) + q * (b - log_m));
        }
        Ok(Self {
            kl_forward: kl_forward.max(0.0),
            kl_reverse: kl_reverse.max(0.0),
            js: js.clamp(0.0, std::f64::consts::LN_2),
            entropy_first: entropy_first.max(0.0),
            entropy_second: entropy_second.max(0.0),
        })
    }

    pub fn symmetric_kl(&self) -> f64 {
        (self.kl_forward + self.kl_reverse) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn lv(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    fn pd(v: &[f64]) -> ProbDist {
        ProbDist::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&lv(&[0.0, 0.0])).as_slice(), &[0.5, 0.5]);
        let p = softmax(&lv(&[1000.0, 1000.0, 1000.0]));
        for &x in p.as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        // e^2 / (e^2 + 1) evaluated at 40 digits
        let p = softmax(&lv(&[2.0, 0.0]));
        assert!((p.as_slice()[0] - 0.880_797_077_977_882_4).abs() < 1e-4);
        assert!((p.as_slice()[1] - 0.119_202_922_022_117_56).abs() < 1e-4);
    }

    #[test]
    fn non_finite_logits_rejected() {
        assert!(matches!(
            LogitVector::new(vec![0.0, f64::NAN]),
            Err(MathError::NonFinite { index: 1 })
        ));
        assert!(LogitVector::new(vec![f64::INFINITY]).is_err());
        assert!(LogitVector::new(vec![]).is_err());
    }

    #[test]
    fn prob_dist_validation() {
        assert!(ProbDist::new(vec![0.5, 0.4]).is_err());
        assert!(ProbDist::new(vec![1.5, -0.5]).is_err());
        assert!(ProbDist::new(vec![0.5, 0.5 + 5e-10]).is_ok());
    }

    #[test]
    fn log_softmax_examples() {
        let l = log_softmax(&lv(&[0.0, 0.0]));
        assert!(l.iter().all(|&x| (x + LN_2).abs() < 1e-15));
        for c in [-1e6, -3.5, 0.0, 42.0, 1e6] {
            let l = log_softmax(&lv(&[c, c, c, c]));
            assert!(l.iter().all(|&x| (x + 4f64.ln()).abs() < 1e-12), "c = {c}");
        }
        let l = log_softmax(&lv(&[3.0, 0.0]));
        assert!((l[0] + 0.048_587_351_573_742_06).abs() < 1e-4);
        assert!((l[1] + 3.048_587_351_573_742).abs() < 1e-4);
    }

    #[test]
    fn kl_examples() {
        let p = pd(&[0.9, 0.1]);
        let q = pd(&[0.5, 0.5]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert!((kl_divergence(&p, &q).unwrap() - 0.368_064_207_168_497).abs() < 1e-3);
        assert!((kl_divergence(&pd(&[1.0, 0.0]), &q).unwrap() - LN_2).abs() < 1e-12);
        assert_eq!(
            kl_divergence(&q, &pd(&[1.0, 0.0])).unwrap(),
            f64::INFINITY
        );
        assert!(matches!(
            kl_divergence(&p, &pd(&[0.2, 0.3, 0.5])),
            Err(MathError::DimensionMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn symmetric_and_js_examples() {
        let p = pd(&[0.9, 0.1]);
        let q = pd(&[0.5, 0.5]);
        assert_eq!(symmetric_kl(&p, &p).unwrap(), 0.0);
        assert!((symmetric_kl(&p, &q).unwrap() - 0.439_444_915_467_243_9).abs() < 1e-3);
        assert_eq!(js_divergence(&q, &q).unwrap(), 0.0);
        assert!((js_divergence(&pd(&[1.0, 0.0]), &pd(&[0.0, 1.0])).unwrap() - LN_2).abs() < 1e-12);
        // direct summation at 40 digits
        assert!((js_divergence(&p, &q).unwrap() - 0.101_749_225_079_196_69).abs() < 1e-6);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&ProbDist::one_hot(5, 3)), 0.0);
        assert!((entropy(&ProbDist::uniform(4)) - 4f64.ln()).abs() < 1e-12);
        assert!((entropy(&pd(&[0.5, 0.25, 0.25])) - 1.039_720_770_839_918).abs() < 1e-4);
    }

    #[test]
    fn stream_divergence_matches_probability_route() {
        let a = lv(&[9f64.ln(), 0.0]);
        let b = lv(&[0.0, 0.0]);
        let d = StreamDivergence::between(&a, &b).unwrap();
        assert!((d.kl_forward - 0.368_064_207_168_497).abs() < 1e-12);
        assert!((d.kl_reverse - 0.510_825_623_765_990_7).abs() < 1e-12);
        assert!((d.js - 0.101_749_225_079_196_69).abs() < 1e-12);
        assert!((d.symmetric_kl() - 0.439_444_915_467_243_9).abs() < 1e-12);
    }

    fn logits_strategy() -> impl Strategy<Value = Vec<f64>> {
        (2usize..40).prop_flat_map(|n| prop::collection::vec(-30.0f64..30.0, n))
    }

    fn pair_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(-20.0f64..20.0, n),
                prop::collection::vec(-20.0f64..20.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(l in logits_strategy(), c in -500.0f64..500.0) {
            let p = softmax(&lv(&l));
            let shifted: Vec<f64> = l.iter().map(|x| x + c).collect();
            let q = softmax(&lv(&shifted));
            prop_assert!(p.max_abs_diff(&q).unwrap() < 1e-9);
            prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn exp_log_softmax_is_softmax(l in logits_strategy()) {
            let p = softmax(&lv(&l));
            let lp = log_softmax(&lv(&l));
            prop_assert!(logsumexp(&lp).abs() < 1e-9);
            for (a, b) in lp.iter().zip(p.as_slice()) {
                prop_assert!((a.exp() - b).abs() < 1e-9);
            }
        }

        #[test]
        fn gibbs_and_js_bounds((a, b) in pair_strategy()) {
            let p = softmax(&lv(&a));
            let q = softmax(&lv(&b));
            let kl = kl_divergence(&p, &q).unwrap();
            prop_assert!(kl >= 0.0);
            if p.max_abs_diff(&q).unwrap() >= EQUALITY_TOLERANCE {
                prop_assert!(kl > 0.0);
            }
            let js = js_divergence(&p, &q).unwrap();
            prop_assert!(js <= LN_2 + 1e-12);
            prop_assert!((js - js_divergence(&q, &p).unwrap()).abs() < 1e-12);
            let s = symmetric_kl(&p, &q).unwrap();
            prop_assert!((s - symmetric_kl(&q, &p).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn entropy_bounded_by_uniform(l in logits_strategy()) {
            let p = softmax(&lv(&l));
            let n = p.vocab_size();
            prop_assert!(entropy(&p) <= (n as f64).ln() + 1e-12);
            prop_assert!((entropy(&ProbDist::uniform(n)) - (n as f64).ln()).abs() < 1e-9);
        }

        #[test]
        fn log_space_divergences_agree((a, b) in pair_strategy()) {
            let (la, lb) = (lv(&a), lv(&b));
            let (p, q) = (softmax(&la), softmax(&lb));
            let d = StreamDivergence::between(&la, &lb).unwrap();
            prop_assert!((d.kl_forward - kl_divergence(&p, &q).unwrap()).abs() < 1e-9);
            prop_assert!((d.kl_reverse - kl_divergence(&q, &p).unwrap()).abs() < 1e-9);
            prop_assert!((d.js - js_divergence(&p, &q).unwrap()).abs() < 1e-9);
            prop_assert!((d.entropy_first - entropy(&p)).abs() < 1e-9);
        }
    }
}
