//! Classifier-update harness under orthogonal features.
//!
//! Every sample of class `y` is the same vector `π_y = scale · e_y`, so the
//! per-class averages in the closed forms are exact. The classifier `ζ` is a
//! `d × M` matrix whose column `y` is `ζ_y`; logits are `s_y(x) = ζ_y · π(x)`.
//!
//! One full-dataset gradient step is taken on the loss
//! `Σ_y P(y) · mean_{x ∈ D_y} ℓ(x, y)` and the change `Δζ_y · π_y` is compared
//! with the closed forms:
//!
//! ```text
//! plain:    η P(y) · Σ_{y'≠y} e^{s_y'−s_y} / (1 + Σ_{y'≠y} e^{s_y'−s_y}) · ‖π_y‖²
//! adjusted: η · P(y) Σ_{y'≠y} P(y') e^{s_y'−s_y} / (P(y) + Σ_{y'≠y} P(y') e^{s_y'−s_y}) · ‖π_y‖²
//! ```
//!
//! At `ζ = 0` these are `η P(y)(M−1)/M` and `η P(y)(1 − P(y))` (for unit
//! `‖π_y‖`), so the adjusted update is larger exactly when `P(y) < 1/M`.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LabelDistribution, LossKind};
use crate::nn::{Dense, Layer, ModelPart};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor2D;

/// Relative tolerance for analytic vs. backprop agreement.
pub const AGREEMENT_TOL: f64 = 1e-6;
/// Tolerance for the equality at the uniform prior.
pub const UNIFORM_EQ_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalFeatureSet {
    num_classes: usize,
    feature_dim: usize,
    scale: f64,
    prior: LabelDistribution,
    class_counts: Vec<usize>,
}

impl OrthogonalFeatureSet {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn prior(&self) -> &LabelDistribution {
        &self.prior
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    /// `π_y`.
    pub fn feature(&self, class: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.feature_dim];
        v[class] = self.scale;
        v
    }

    /// `‖π_y‖²`.
    pub fn norm_sq(&self, _class: usize) -> f64 {
        self.scale * self.scale
    }

    /// `s(π_y)`, one logit per class.
    fn logits_of(&self, zeta: &Tensor2D, class: usize) -> Vec<f64> {
        (0..self.num_classes).map(|j| zeta[(class, j)] * self.scale).collect()
    }

    fn check_zeta(&self, zeta: &Tensor2D) -> Result<()> {
        zeta.ensure_shape("classifier", (self.feature_dim, self.num_classes))
    }
}

/// Samples of class `y` are all `scale · e_y`, with `round(n · P(y))` of
/// them. Row order is shuffled under `seed`.
pub fn build_orthogonal_dataset(
    num_classes: usize,
    feature_dim: usize,
    prior: &LabelDistribution,
    n_total: usize,
    seed: u64,
) -> Result<(Tensor2D, Vec<usize>, OrthogonalFeatureSet)> {
    build_scaled(num_classes, feature_dim, prior, n_total, 1.0, seed)
}

fn build_scaled(
    num_classes: usize,
    feature_dim: usize,
    prior: &LabelDistribution,
    n_total: usize,
    scale: f64,
    seed: u64,
) -> Result<(Tensor2D, Vec<usize>, OrthogonalFeatureSet)> {
    if num_classes < 2 {
        return Err(Error::invalid("need at least 2 classes"));
    }
    if feature_dim < num_classes {
        return Err(Error::invalid(format!(
            "feature dim {feature_dim} cannot hold {num_classes} orthogonal class vectors"
        )));
    }
    if prior.num_classes() != num_classes {
        return Err(Error::invalid(format!(
            "prior has {} classes, expected {num_classes}",
            prior.num_classes()
        )));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid(format!("feature scale must be > 0, got {scale}")));
    }
    let class_counts: Vec<usize> = prior
        .probs()
        .iter()
        .map(|&p| (n_total as f64 * p).round() as usize)
        .collect();
    for (y, (&p, &c)) in prior.probs().iter().zip(&class_counts).enumerate() {
        if p > 0.0 && c == 0 {
            return Err(Error::invalid(format!(
                "class {y} has prior {p} but round({n_total} · {p}) = 0 samples"
            )));
        }
    }
    let mut labels: Vec<usize> = class_counts
        .iter()
        .enumerate()
        .flat_map(|(y, &c)| std::iter::repeat_n(y, c))
        .collect();
    labels.shuffle(&mut stream_rng(seed, Stream::Theory));
    let mut features = Tensor2D::zeros(labels.len(), feature_dim);
    for (i, &y) in labels.iter().enumerate() {
        features[(i, y)] = scale;
    }
    let fs = OrthogonalFeatureSet {
        num_classes,
        feature_dim,
        scale,
        prior: prior.clone(),
        class_counts,
    };
    Ok((features, labels, fs))
}

pub fn analytic_logit_update_plain(fs: &OrthogonalFeatureSet, zeta: &Tensor2D, eta: f64) -> Result<Vec<f64>> {
    fs.check_zeta(zeta)?;
    Ok((0..fs.num_classes)
        .map(|y| {
            let p = fs.prior.prob(y);
            if p == 0.0 {
                return 0.0;
            }
            let s = fs.logits_of(zeta, y);
            let tail: f64 = (0..fs.num_classes)
                .filter(|&j| j != y)
                .map(|j| (s[j] - s[y]).exp())
                .sum();
            eta * p * tail / (1.0 + tail) * fs.norm_sq(y)
        })
        .collect())
}

pub fn analytic_logit_update_adjusted(fs: &OrthogonalFeatureSet, zeta: &Tensor2D, eta: f64) -> Result<Vec<f64>> {
    fs.check_zeta(zeta)?;
    Ok((0..fs.num_classes)
        .map(|y| {
            let p = fs.prior.prob(y);
            if p == 0.0 {
                return 0.0;
            }
            let s = fs.logits_of(zeta, y);
            let tail: f64 = (0..fs.num_classes)
                .filter(|&j| j != y)
                .map(|j| fs.prior.prob(j) * (s[j] - s[y]).exp())
                .sum();
            eta * p * tail / (p + tail) * fs.norm_sq(y)
        })
        .collect())
}

/// One backprop step on the `P(y)`-weighted full-dataset loss; returns
/// `(ζ_new − ζ)_y · π_y` per class.
pub fn empirical_logit_update(
    fs: &OrthogonalFeatureSet,
    features: &Tensor2D,
    labels: &[usize],
    zeta: &Tensor2D,
    eta: f64,
    loss: LossKind,
) -> Result<Vec<f64>> {
    fs.check_zeta(zeta)?;
    features.ensure_shape("orthogonal features", (labels.len(), fs.feature_dim))?;
    let classifier = ModelPart::new(vec![Layer::Dense(Dense::new(zeta.clone(), vec![0.0; fs.num_classes])?)])?;
    let (logits, cache) = classifier.forward(features)?;
    let out = loss.evaluate(&logits, labels, &fs.prior)?;

    // The loss is a batch mean; reweight row i by n·P(y_i)/|D_{y_i}|.
    let n = labels.len() as f64;
    let mut grad = out.logit_grad;
    for (i, &y) in labels.iter().enumerate() {
        let w = n * fs.prior.prob(y) / fs.class_counts[y] as f64;
        for g in grad.row_mut(i) {
            *g *= w;
        }
    }
    let (param_grads, _) = classifier.backward(&cache, &grad)?;
    let dzeta = &param_grads.layers[0]
        .as_ref()
        .ok_or_else(|| Error::Internal("classifier gradient missing".into()))?
        .weights;
    let mut updated = zeta.clone();
    crate::nn::sgd_step(updated.as_mut_slice(), dzeta.as_slice(), eta)?;

    Ok((0..fs.num_classes)
        .map(|y| {
            let pi = fs.feature(y);
            (0..fs.feature_dim)
                .map(|r| (updated[(r, y)] - zeta[(r, y)]) * pi[r])
                .sum()
        })
        .collect())
}

/// Prior with `p` on class 0 and the rest spread evenly.
pub fn one_vs_rest_prior(num_classes: usize, p: f64) -> Result<LabelDistribution> {
    if !(0.0..=1.0).contains(&p) || num_classes < 2 {
        return Err(Error::invalid(format!(
            "invalid one-vs-rest prior: M={num_classes}, p={p}"
        )));
    }
    let rest = (1.0 - p) / (num_classes - 1) as f64;
    let mut probs = vec![rest; num_classes];
    probs[0] = p;
    LabelDistribution::new(probs)
}

/// `{0.001, 0.01, 0.1, 1/M, 0.5, 0.9, 0.99, 0.999}`, ascending, with `1/M`
/// listed once when it coincides with a fixed point.
pub fn default_grid(num_classes: usize) -> Vec<f64> {
    let mut grid = vec![0.001, 0.01, 0.1, 0.5, 0.9, 0.99, 0.999];
    let uniform = 1.0 / num_classes as f64;
    if !grid.contains(&uniform) {
        grid.push(uniform);
        grid.sort_by(f64::total_cmp);
    }
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrdering {
    AdjGt,
    Equal,
    AdjLt,
}

impl UpdateOrdering {
    fn of(plain: f64, adjusted: f64) -> Self {
        if (adjusted - plain).abs() <= UNIFORM_EQ_TOL * plain.abs().max(1.0) {
            UpdateOrdering::Equal
        } else if adjusted > plain {
            UpdateOrdering::AdjGt
        } else {
            UpdateOrdering::AdjLt
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            UpdateOrdering::AdjGt => "adj_gt",
            UpdateOrdering::Equal => "equal",
            UpdateOrdering::AdjLt => "adj_lt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRow {
    pub p_y: f64,
    pub plain_analytic: f64,
    pub plain_empirical: f64,
    pub adj_analytic: f64,
    pub adj_empirical: f64,
    pub ordering: UpdateOrdering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierUpdateReport {
    pub num_classes: usize,
    pub eta: f64,
    /// `η ‖π‖²`, the natural scale of every update.
    pub unit: f64,
    pub rows: Vec<UpdateRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub eta: f64,
    pub grid: Vec<f64>,
    /// Negative control: compute the "plain" columns with the adjusted loss
    /// and vice versa.
    pub swap_losses: bool,
}

impl SweepConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            feature_dim: num_classes,
            eta: 1.0,
            grid: default_grid(num_classes),
            swap_losses: false,
        }
    }
}

pub fn theorem2_sweep(
    num_classes: usize,
    feature_dim: usize,
    eta: f64,
    grid: &[f64],
) -> Result<ClassifierUpdateReport> {
    run_sweep(&SweepConfig {
        num_classes,
        feature_dim,
        eta,
        grid: grid.to_vec(),
        swap_losses: false,
    })
}

/// Both updates for class 0 at each grid point, from `ζ = 0`.
pub fn run_sweep(cfg: &SweepConfig) -> Result<ClassifierUpdateReport> {
    if cfg.grid.is_empty() {
        return Err(Error::invalid("empty prior grid"));
    }
    if let Some(p) = cfg.grid.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::invalid(format!("grid value {p} is outside (0, 1)")));
    }
    if !(cfg.eta.is_finite() && cfg.eta > 0.0) {
        return Err(Error::invalid(format!("eta must be > 0, got {}", cfg.eta)));
    }
    let m = cfg.num_classes;
    let zeta = Tensor2D::zeros(cfg.feature_dim, m);
    let (plain_kind, adj_kind) = if cfg.swap_losses {
        (LossKind::Adjusted, LossKind::Plain)
    } else {
        (LossKind::Plain, LossKind::Adjusted)
    };
    let analytic = |fs: &OrthogonalFeatureSet, kind: LossKind| match kind {
        LossKind::Plain => analytic_logit_update_plain(fs, &zeta, cfg.eta),
        LossKind::Adjusted => analytic_logit_update_adjusted(fs, &zeta, cfg.eta),
    };

    let mut rows = Vec::with_capacity(cfg.grid.len());
    for &p in &cfg.grid {
        let prior = one_vs_rest_prior(m, p)?;
        let min_p = prior.probs().iter().copied().filter(|&q| q > 0.0).fold(1.0, f64::min);
        let n = ((2.0 / min_p).ceil() as usize).max(m);
        let (x, y, fs) = build_orthogonal_dataset(m, cfg.feature_dim, &prior, n, 0)?;
        let plain_a = analytic(&fs, plain_kind)?[0];
        let adj_a = analytic(&fs, adj_kind)?[0];
        let plain_e = empirical_logit_update(&fs, &x, &y, &zeta, cfg.eta, plain_kind)?[0];
        let adj_e = empirical_logit_update(&fs, &x, &y, &zeta, cfg.eta, adj_kind)?[0];
        rows.push(UpdateRow {
            p_y: p,
            plain_analytic: plain_a,
            plain_empirical: plain_e,
            adj_analytic: adj_a,
            adj_empirical: adj_e,
            ordering: UpdateOrdering::of(plain_a, adj_a),
        });
    }
    Ok(ClassifierUpdateReport {
        num_classes: m,
        eta: cfg.eta,
        unit: cfg.eta,
        rows,
    })
}

/// `|a − b| ≤ tol · max(|a|, |b|, floor)`.
pub fn rel_close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(floor)
}

impl ClassifierUpdateReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("P_y,plain_analytic,plain_empirical,adj_analytic,adj_empirical,ordering_flag\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:?},{:?},{:?},{:?},{:?},{}",
                r.p_y,
                r.plain_analytic,
                r.plain_empirical,
                r.adj_analytic,
                r.adj_empirical,
                r.ordering.as_str()
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Every violated expectation, one message per failure. Empty means pass.
    ///
    /// Checked: analytic/backprop agreement; `adjusted > plain` below `1/M`,
    /// `<` above, equal at `1/M`; and both vanishing limits at the extremes.
    pub fn failures(&self) -> Vec<String> {
        let uniform = 1.0 / self.num_classes as f64;
        let mut out = Vec::new();
        for r in &self.rows {
            let p = r.p_y;
            if !rel_close(r.plain_analytic, r.plain_empirical, AGREEMENT_TOL, 1e-300) {
                out.push(format!(
                    "P(y)={p}: plain analytic {} vs backprop {}",
                    r.plain_analytic, r.plain_empirical
                ));
            }
            if !rel_close(r.adj_analytic, r.adj_empirical, AGREEMENT_TOL, 1e-300) {
                out.push(format!(
                    "P(y)={p}: adjusted analytic {} vs backprop {}",
                    r.adj_analytic, r.adj_empirical
                ));
            }
            let expected = if (p - uniform).abs() <= UNIFORM_EQ_TOL {
                UpdateOrdering::Equal
            } else if p < uniform {
                UpdateOrdering::AdjGt
            } else {
                UpdateOrdering::AdjLt
            };
            if r.ordering != expected {
                out.push(format!(
                    "P(y)={p}: expected {}, got {} (plain {}, adjusted {})",
                    expected.as_str(),
                    r.ordering.as_str(),
                    r.plain_analytic,
                    r.adj_analytic
                ));
            }
            if p <= 1e-3 && r.plain_analytic >= 1e-2 * self.unit {
                out.push(format!("P(y)={p}: plain update {} does not vanish", r.plain_analytic));
            }
            if p >= 1.0 - 1e-3 && r.adj_analytic >= 1e-2 * self.unit {
                out.push(format!("P(y)={p}: adjusted update {} does not vanish", r.adj_analytic));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn two_class_construction() {
        let prior = LabelDistribution::uniform(2);
        let (x, y, fs) = build_orthogonal_dataset(2, 2, &prior, 4, 0).unwrap();
        let mut rows: Vec<(Vec<f64>, usize)> = x.iter_rows().map(|r| r.to_vec()).zip(y).collect();
        rows.sort_by_key(|(_, l)| *l);
        assert_eq!(
            rows,
            vec![
                (vec![1.0, 0.0], 0),
                (vec![1.0, 0.0], 0),
                (vec![0.0, 1.0], 1),
                (vec![0.0, 1.0], 1)
            ]
        );
        let dot: f64 = fs.feature(0).iter().zip(fs.feature(1)).map(|(a, b)| a * b).sum();
        assert_eq!(dot, 0.0);
    }

    #[test]
    fn degenerate_prior_rejected() {
        let prior = LabelDistribution::new(vec![0.999, 0.001]).unwrap();
        assert!(build_orthogonal_dataset(2, 2, &prior, 100, 0).is_err());
        assert!(build_orthogonal_dataset(3, 2, &LabelDistribution::uniform(3), 9, 0).is_err());
    }

    #[test]
    fn zero_classifier_closed_forms() {
        let m = 4;
        let prior = LabelDistribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let (_, _, fs) = build_orthogonal_dataset(m, 6, &prior, 100, 1).unwrap();
        let zeta = Tensor2D::zeros(6, m);
        let plain = analytic_logit_update_plain(&fs, &zeta, 0.5).unwrap();
        let adj = analytic_logit_update_adjusted(&fs, &zeta, 0.5).unwrap();
        for y in 0..m {
            let p = prior.prob(y);
            assert!((plain[y] - 0.5 * p * 3.0 / 4.0).abs() < 1e-15);
            assert!((adj[y] - 0.5 * p * (1.0 - p)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_prior_and_certain_class() {
        let prior = LabelDistribution::new(vec![1.0, 0.0, 0.0]).unwrap();
        let (_, _, fs) = build_orthogonal_dataset(3, 3, &prior, 5, 0).unwrap();
        let zeta = Tensor2D::zeros(3, 3);
        assert_eq!(analytic_logit_update_plain(&fs, &zeta, 1.0).unwrap()[1], 0.0);
        assert_eq!(analytic_logit_update_adjusted(&fs, &zeta, 1.0).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn zero_learning_rate_gives_zero_update() {
        let prior = LabelDistribution::uniform(3);
        let (x, y, fs) = build_orthogonal_dataset(3, 3, &prior, 6, 0).unwrap();
        let zeta = Tensor2D::zeros(3, 3);
        let e = empirical_logit_update(&fs, &x, &y, &zeta, 0.0, LossKind::Plain).unwrap();
        assert_eq!(e, vec![0.0; 3]);
    }

    #[test]
    fn random_classifier_agreement() {
        let mut rng = stream_rng(11, Stream::Theory);
        let prior = LabelDistribution::new(vec![0.5, 0.3, 0.15, 0.05]).unwrap();
        let (x, y, fs) = build_scaled(4, 7, &prior, 40, 1.7, 2).unwrap();
        for _ in 0..5 {
            let zeta =
                Tensor2D::from_vec(7, 4, (0..28).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap();
            for (kind, analytic) in [
                (LossKind::Plain, analytic_logit_update_plain(&fs, &zeta, 0.3).unwrap()),
                (
                    LossKind::Adjusted,
                    analytic_logit_update_adjusted(&fs, &zeta, 0.3).unwrap(),
                ),
            ] {
                let emp = empirical_logit_update(&fs, &x, &y, &zeta, 0.3, kind).unwrap();
                for (a, e) in analytic.iter().zip(&emp) {
                    assert!(rel_close(*a, *e, 1e-9, 1e-300), "{kind:?}: {a} vs {e}");
                }
            }
        }
    }

    #[test]
    fn default_grid_lists_uniform_point_once() {
        assert_eq!(default_grid(10).len(), 7);
        let g = default_grid(4);
        assert_eq!(g.len(), 8);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(g.contains(&0.25));
    }

    #[test]
    fn default_sweep_passes_and_swap_fails() {
        let report = run_sweep(&SweepConfig::new(10)).unwrap();
        assert!(report.failures().is_empty(), "{:?}", report.failures());
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 1 + 7);
        assert!(csv.starts_with("P_y,plain_analytic"));

        let swapped = run_sweep(&SweepConfig {
            swap_losses: true,
            ..SweepConfig::new(10)
        })
        .unwrap();
        assert!(!swapped.failures().is_empty());
    }

    #[test]
    fn uniform_only_grid_is_all_equal() {
        let report = theorem2_sweep(5, 5, 0.1, &[0.2]).unwrap();
        assert_eq!(report.rows[0].ordering, UpdateOrdering::Equal);
        assert!(report.failures().is_empty());
        assert!(theorem2_sweep(5, 5, 0.1, &[1.0]).is_err());
    }
}
