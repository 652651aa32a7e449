//! Softmax cross-entropy, its logit-adjusted form, and prediction rules.
//!
//! The adjusted loss adds `log P(y)` to every logit before the softmax. A
//! class with `P(y) = 0` gets an offset of `-inf`, i.e. it drops out of the
//! softmax denominator entirely.
//!
//! All batch losses are means over the rows of the logits matrix, and the
//! returned `logit_grad` is the exact gradient of that mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

/// Tolerance on `Σ P(y) = 1`.
pub const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    counts: Option<Vec<u64>>,
}

impl LabelDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("label distribution needs at least one class"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(format!(
                "probabilities must be finite and >= 0: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs, counts: None })
    }

    pub fn uniform(num_classes: usize) -> Self {
        let p = 1.0 / num_classes as f64;
        Self {
            probs: vec![p; num_classes],
            counts: None,
        }
    }

    /// Empirical frequencies; the counts are kept alongside.
    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::invalid("cannot estimate a distribution from zero samples"));
        }
        let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(Self {
            probs,
            counts: Some(counts),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn counts(&self) -> Option<&[u64]> {
        self.counts.as_deref()
    }

    pub fn prob(&self, class: usize) -> f64 {
        self.probs[class]
    }

    /// Classes with nonzero probability.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.probs.iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(i, _)| i)
    }

    pub fn total_variation(&self, other: &LabelDistribution) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// How `log P(y)` treats classes with `P(y) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ZeroPriorPolicy {
    /// `log 0 = -inf`: the class contributes nothing to the softmax denominator.
    #[default]
    NegInfinity,
    /// Replace zero probabilities by a floor before taking the log.
    Clamp(f64),
}

pub fn log_prior(dist: &LabelDistribution, policy: ZeroPriorPolicy) -> Vec<f64> {
    dist.probs
        .iter()
        .map(|&p| match policy {
            _ if p > 0.0 => p.ln(),
            ZeroPriorPolicy::NegInfinity => f64::NEG_INFINITY,
            ZeroPriorPolicy::Clamp(floor) => floor.ln(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// `∂ value / ∂ logits`, same shape as the logits.
    pub logit_grad: Tensor2D,
}

/// Which loss a protocol side trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Softmax cross-entropy.
    Plain,
    /// Softmax cross-entropy on `s_y + log P(y)`.
    Adjusted,
}

impl LossKind {
    /// Evaluates this loss. `prior` is ignored for [`LossKind::Plain`].
    pub fn evaluate(self, logits: &Tensor2D, labels: &[usize], prior: &LabelDistribution) -> Result<LossOutput> {
        match self {
            LossKind::Plain => cross_entropy(logits, labels),
            LossKind::Adjusted => logit_adjusted_ce(logits, labels, prior),
        }
    }
}

fn check_logits(logits: &Tensor2D) -> Result<()> {
    if logits.cols() < 2 {
        return Err(Error::invalid(format!(
            "softmax needs at least 2 classes, got {}",
            logits.cols()
        )));
    }
    if !logits.is_finite() {
        return Err(Error::invalid("logits contain NaN or infinite values"));
    }
    Ok(())
}

/// Stable softmax of `row + offsets` written into `out`. Entries whose offset
/// is `-inf` get probability exactly 0. Returns the log of the normaliser
/// relative to the row maximum, together with that maximum.
fn softmax_row(row: &[f64], offsets: Option<&[f64]>, out: &mut [f64]) -> (f64, f64) {
    let z = |j: usize| match offsets {
        Some(o) => row[j] + o[j],
        None => row[j],
    };
    let max = (0..row.len()).map(z).fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (j, o) in out.iter_mut().enumerate() {
        let zj = z(j);
        *o = if zj == f64::NEG_INFINITY { 0.0 } else { (zj - max).exp() };
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    (sum.ln(), max)
}

pub fn softmax_probs(logits: &Tensor2D) -> Result<Tensor2D> {
    check_logits(logits)?;
    let mut out = Tensor2D::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        softmax_row(logits.row(r), None, out.row_mut(r));
    }
    Ok(out)
}

fn softmax_ce(logits: &Tensor2D, labels: &[usize], offsets: Option<&[f64]>) -> Result<LossOutput> {
    check_logits(logits)?;
    let (n, m) = logits.shape();
    if labels.len() != n {
        return Err(Error::invalid(format!("{} labels for {n} logit rows", labels.len())));
    }
    if n == 0 {
        return Err(Error::invalid("loss over an empty batch"));
    }
    let mut grad = Tensor2D::zeros(n, m);
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;
    for (r, &y) in labels.iter().enumerate() {
        if y >= m {
            return Err(Error::invalid(format!("label {y} out of range for {m} classes")));
        }
        let row = logits.row(r);
        let zy = row[y] + offsets.map_or(0.0, |o| o[y]);
        if zy == f64::NEG_INFINITY {
            return Err(Error::invalid(format!("label {y} has zero prior")));
        }
        let g = grad.row_mut(r);
        let (log_sum, max) = softmax_row(row, offsets, g);
        total += log_sum - (zy - max);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= inv_n);
    }
    Ok(LossOutput {
        value: total * inv_n,
        logit_grad: grad,
    })
}

pub fn cross_entropy(logits: &Tensor2D, labels: &[usize]) -> Result<LossOutput> {
    softmax_ce(logits, labels, None)
}

/// Cross-entropy on `s + log P`. Every label in the batch must have
/// `P(y) > 0`.
pub fn logit_adjusted_ce(logits: &Tensor2D, labels: &[usize], prior: &LabelDistribution) -> Result<LossOutput> {
    if prior.num_classes() != logits.cols() {
        return Err(Error::invalid(format!(
            "prior has {} classes, logits have {}",
            prior.num_classes(),
            logits.cols()
        )));
    }
    let offsets = log_prior(prior, ZeroPriorPolicy::NegInfinity);
    softmax_ce(logits, labels, Some(&offsets))
}

fn argmax_by(row: &[f64], score: impl Fn(usize, f64) -> Option<f64>) -> usize {
    let mut best = None::<(usize, f64)>;
    for (j, &v) in row.iter().enumerate() {
        if let Some(s) = score(j, v) {
            // Strict comparison keeps the lowest index on ties.
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((j, s));
            }
        }
    }
    best.map_or(0, |(j, _)| j)
}

/// Row-wise argmax, ties to the lowest class index.
pub fn predict(logits: &Tensor2D) -> Vec<usize> {
    logits.iter_rows().map(|row| argmax_by(row, |_, v| Some(v))).collect()
}

/// Row-wise argmax of `s_y - log P(y)` over classes with `P(y) > 0`.
pub fn predict_balanced(logits: &Tensor2D, prior: &LabelDistribution) -> Result<Vec<usize>> {
    if prior.num_classes() != logits.cols() {
        return Err(Error::invalid("prior and logits disagree on the number of classes"));
    }
    if prior.support().next().is_none() {
        return Err(Error::invalid("prior has no class with positive probability"));
    }
    let lp = log_prior(prior, ZeroPriorPolicy::NegInfinity);
    Ok(logits
        .iter_rows()
        .map(|row| argmax_by(row, |j, v| lp[j].is_finite().then(|| v - lp[j])))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(rows: &[&[f64]]) -> Tensor2D {
        Tensor2D::from_rows(rows).unwrap()
    }

    /// Central differences of `f` with respect to every logit.
    fn fd_logit_grad(logits: &Tensor2D, f: impl Fn(&Tensor2D) -> f64) -> Tensor2D {
        let eps = 1e-6;
        let mut g = Tensor2D::zeros(logits.rows(), logits.cols());
        for r in 0..logits.rows() {
            for c in 0..logits.cols() {
                let mut up = logits.clone();
                up[(r, c)] += eps;
                let mut dn = logits.clone();
                dn[(r, c)] -= eps;
                g[(r, c)] = (f(&up) - f(&dn)) / (2.0 * eps);
            }
        }
        g
    }

    #[test]
    fn label_distribution_validation() {
        assert!(LabelDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(LabelDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(LabelDistribution::from_counts(vec![0, 0]).is_err());
        let d = LabelDistribution::from_counts(vec![2, 2]).unwrap();
        assert_eq!(d.probs(), &[0.5, 0.5]);
        assert_eq!(d.counts(), Some(&[2u64, 2][..]));
    }

    #[test]
    fn softmax_equal_logits_uniform() {
        let p = softmax_probs(&t(&[&[1.5, 1.5, 1.5, 1.5]])).unwrap();
        assert!(p.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax_probs(&t(&[&[0.0, 3f64.ln()]])).unwrap();
        assert!((p[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((p[(0, 1)] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax_probs(&t(&[&[1.0]])).is_err());
        assert!(softmax_probs(&t(&[&[1.0, f64::NAN]])).is_err());
        assert!(softmax_probs(&t(&[&[1.0, f64::INFINITY]])).is_err());
    }

    #[test]
    fn ce_uniform_logits_is_ln_m() {
        let out = cross_entropy(&t(&[&[0.3; 5], &[0.3; 5]]), &[4, 1]).unwrap();
        assert!((out.value - 5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn ce_confident_correct_goes_to_zero() {
        let out = cross_entropy(&t(&[&[60.0, 0.0, 0.0]]), &[0]).unwrap();
        assert!(out.value < 1e-25);
    }

    #[test]
    fn ce_label_out_of_range() {
        assert!(cross_entropy(&t(&[&[0.0, 0.0]]), &[2]).is_err());
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let logits = t(&[&[0.2, -1.0, 0.7], &[1.5, 0.1, -0.4], &[-0.3, 0.0, 2.0]]);
        let labels = [0, 2, 1];
        let out = cross_entropy(&logits, &labels).unwrap();
        let fd = fd_logit_grad(&logits, |l| cross_entropy(l, &labels).unwrap().value);
        assert!(out.logit_grad.max_abs_diff(&fd) < 1e-6);
    }

    #[test]
    fn log_prior_cases() {
        let lp = log_prior(&LabelDistribution::uniform(4), ZeroPriorPolicy::NegInfinity);
        assert!(lp.iter().all(|&v| (v - 0.25f64.ln()).abs() < 1e-15));
        let lp = log_prior(
            &LabelDistribution::new(vec![1.0, 0.0]).unwrap(),
            ZeroPriorPolicy::NegInfinity,
        );
        assert_eq!(lp, vec![0.0, f64::NEG_INFINITY]);
        let lp = log_prior(
            &LabelDistribution::new(vec![1.0, 0.0]).unwrap(),
            ZeroPriorPolicy::Clamp(1e-3),
        );
        assert_eq!(lp[1], 1e-3f64.ln());
    }

    #[test]
    fn zero_prior_class_drops_out_of_softmax() {
        // Adjusted softmax with P = [0.5, 0, 0.5] equals the plain softmax of
        // the remaining two logits (the equal priors cancel).
        let logits = t(&[&[0.4, 9.0, -0.2]]);
        let prior = LabelDistribution::new(vec![0.5, 0.0, 0.5]).unwrap();
        let adj = logit_adjusted_ce(&logits, &[0], &prior).unwrap();
        let reduced = cross_entropy(&t(&[&[0.4, -0.2]]), &[0]).unwrap();
        assert!((adj.value - reduced.value).abs() < 1e-15);
        assert_eq!(adj.logit_grad[(0, 1)], 0.0);
        assert!((adj.logit_grad[(0, 0)] - reduced.logit_grad[(0, 0)]).abs() < 1e-15);
        assert!((adj.logit_grad[(0, 2)] - reduced.logit_grad[(0, 1)]).abs() < 1e-15);
    }

    #[test]
    fn adjusted_hand_value() {
        let prior = LabelDistribution::new(vec![0.9, 0.1]).unwrap();
        let out = logit_adjusted_ce(&t(&[&[0.0, 0.0]]), &[0], &prior).unwrap();
        assert!((out.value - 0.10536051565782628).abs() < 1e-14);
        assert!((out.value + 0.9f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn adjusted_rejects_zero_prior_label() {
        let prior = LabelDistribution::new(vec![1.0, 0.0]).unwrap();
        assert!(logit_adjusted_ce(&t(&[&[0.0, 0.0]]), &[1], &prior).is_err());
    }

    #[test]
    fn adjusted_gradient_matches_finite_differences() {
        let logits = t(&[&[0.2, -1.0, 0.7, 0.0], &[1.5, 0.1, -0.4, 0.3]]);
        let labels = [3, 0];
        let prior = LabelDistribution::new(vec![0.6, 0.05, 0.15, 0.2]).unwrap();
        let out = logit_adjusted_ce(&logits, &labels, &prior).unwrap();
        let fd = fd_logit_grad(&logits, |l| logit_adjusted_ce(l, &labels, &prior).unwrap().value);
        assert!(out.logit_grad.max_abs_diff(&fd) < 1e-6);
    }

    #[test]
    fn predict_rules() {
        assert_eq!(predict(&t(&[&[1.0, 3.0, 2.0], &[2.0, 2.0, 0.0]])), vec![1, 0]);
        let prior = LabelDistribution::new(vec![0.99, 0.01]).unwrap();
        assert_eq!(predict_balanced(&t(&[&[0.0, 0.0]]), &prior).unwrap(), vec![1]);
        let prior = LabelDistribution::new(vec![0.0, 0.5, 0.5]).unwrap();
        assert_eq!(predict_balanced(&t(&[&[5.0, 1.0, 1.0]]), &prior).unwrap(), vec![1]);
    }

    #[test]
    fn balanced_rule_beats_plain_on_prior_biased_classifier() {
        // Class-conditional score: +1 for the true class, 0 otherwise. The
        // biased classifier adds log P(y), which makes the head class win
        // every row under plain argmax.
        let prior = LabelDistribution::new(vec![0.7, 0.2, 0.1]).unwrap();
        let lp = log_prior(&prior, ZeroPriorPolicy::NegInfinity);
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .map(|&y| (0..3).map(|c| lp[c] + if c == y { 1.0 } else { 0.0 }).collect())
            .collect();
        let logits = Tensor2D::from_rows(&rows).unwrap();
        let bal_acc = |pred: &[usize]| {
            let mut per = [0.0; 3];
            for (p, y) in pred.iter().zip(&labels) {
                if p == y {
                    per[*y] += 1.0 / 10.0;
                }
            }
            per.iter().sum::<f64>() / 3.0
        };
        let plain = bal_acc(&predict(&logits));
        let balanced = bal_acc(&predict_balanced(&logits, &prior).unwrap());
        assert!(balanced >= plain);
        assert!((balanced - 1.0).abs() < 1e-12);
        assert!((plain - 1.0 / 3.0).abs() < 1e-12);
    }

    fn logits_strategy() -> impl Strategy<Value = (Tensor2D, Vec<usize>, Vec<f64>)> {
        (2usize..6, 1usize..5).prop_flat_map(|(m, n)| {
            (
                proptest::collection::vec(-5.0f64..5.0, m * n),
                proptest::collection::vec(0..m, n),
                proptest::collection::vec(0.01f64..1.0, m),
            )
                .prop_map(move |(v, y, w)| (Tensor2D::from_vec(n, m, v).unwrap(), y, w))
        })
    }

    fn normalize(w: &[f64]) -> LabelDistribution {
        let s: f64 = w.iter().sum();
        let mut p: Vec<f64> = w.iter().map(|v| v / s).collect();
        let drift: f64 = 1.0 - p.iter().sum::<f64>();
        p[0] += drift;
        LabelDistribution::new(p).unwrap()
    }

    proptest! {
        #[test]
        fn uniform_prior_reduces_to_plain((logits, labels, _) in logits_strategy()) {
            let m = logits.cols();
            let plain = cross_entropy(&logits, &labels).unwrap();
            let adj = logit_adjusted_ce(&logits, &labels, &LabelDistribution::uniform(m)).unwrap();
            prop_assert!((plain.value - adj.value).abs() <= 1e-12);
            prop_assert!(plain.logit_grad.max_abs_diff(&adj.logit_grad) <= 1e-12);
            prop_assert_eq!(predict(&logits), predict_balanced(&logits, &LabelDistribution::uniform(m)).unwrap());
        }

        #[test]
        fn shift_invariance((logits, labels, w) in logits_strategy(), shift in -20.0f64..20.0) {
            let prior = normalize(&w);
            let shifted = logits.map(|v| v + shift);
            for kind in [LossKind::Plain, LossKind::Adjusted] {
                let a = kind.evaluate(&logits, &labels, &prior).unwrap();
                let b = kind.evaluate(&shifted, &labels, &prior).unwrap();
                prop_assert!((a.value - b.value).abs() <= 1e-12 * a.value.abs().max(1.0));
                prop_assert!(a.logit_grad.max_abs_diff(&b.logit_grad) <= 1e-12);
            }
            let pa = softmax_probs(&logits).unwrap();
            let pb = softmax_probs(&shifted).unwrap();
            prop_assert!(pa.max_abs_diff(&pb) <= 1e-12);
        }

        #[test]
        fn gradient_rows_sum_to_zero((logits, labels, w) in logits_strategy()) {
            let prior = normalize(&w);
            for kind in [LossKind::Plain, LossKind::Adjusted] {
                let out = kind.evaluate(&logits, &labels, &prior).unwrap();
                for row in out.logit_grad.iter_rows() {
                    prop_assert!(row.iter().sum::<f64>().abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn probabilities_sum_to_one((logits, _, _) in logits_strategy()) {
            let p = softmax_probs(&logits).unwrap();
            for row in p.iter_rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn prediction_is_permutation_equivariant((logits, _, _) in logits_strategy(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let m = logits.cols();
            let mut perm: Vec<usize> = (0..m).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            // column j of the permuted matrix holds original class perm[j]
            let rows: Vec<Vec<f64>> = logits.iter_rows().map(|r| perm.iter().map(|&c| r[c]).collect()).collect();
            let permuted = Tensor2D::from_rows(&rows).unwrap();
            let orig = predict(&logits);
            let new = predict(&permuted);
            for (row, (&o, &n)) in logits.iter_rows().zip(orig.iter().zip(&new)) {
                // Ties may legitimately resolve differently; compare scores.
                prop_assert_eq!(row[perm[n]], row[o]);
            }
        }
    }
}
