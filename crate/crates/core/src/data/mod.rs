//! Datasets, label-skew partitioning and minibatch planning.

mod batch;
mod io;
mod partition;

pub use batch::{allocate_minibatch_sizes, sample_minibatch, BatchPlan, MinibatchSampler};
pub use io::{load_dataset, write_csv, write_idx_pair, DataFormat};
pub use partition::{
    partition_dirichlet_skew, partition_iid, partition_quantity_skew, ClientManifest, Partition, PartitionManifest,
    SkewSpec, DIRICHLET_MAX_RETRIES,
};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::losses::LabelDistribution;
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor2D;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor2D,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor2D, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidData("dataset has no samples".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::InvalidData(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::InvalidData(format!(
                "sample {i} has label {y} but there are only {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &Tensor2D {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<u64> {
        class_counts(&self.labels, self.num_classes)
    }

    /// Errors unless every class has at least one sample.
    pub fn ensure_all_classes_present(&self) -> Result<()> {
        if let Some(y) = self.class_counts().iter().position(|&c| c == 0) {
            return Err(Error::InvalidData(format!("class {y} has no samples")));
        }
        Ok(())
    }

    /// Sample indices grouped by label.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let features = self.features.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(features, labels, self.num_classes)
    }
}

pub(crate) fn class_counts(labels: &[usize], num_classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; num_classes];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}

/// Empirical label distribution of `labels` over `num_classes` classes.
pub fn estimate_label_distribution(labels: &[usize], num_classes: usize) -> Result<LabelDistribution> {
    if labels.is_empty() {
        return Err(Error::invalid("cannot estimate a label distribution from no labels"));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::invalid(format!(
            "label {y} out of range for {num_classes} classes"
        )));
    }
    LabelDistribution::from_counts(class_counts(labels, num_classes))
}

/// Isotropic Gaussian blobs, one per class.
///
/// Class means lie on a sphere of radius `separation` in random directions;
/// every blob has unit variance per dimension.
#[derive(Debug, Clone)]
pub struct SyntheticBlobs {
    means: Tensor2D,
}

impl SyntheticBlobs {
    pub fn new(num_classes: usize, dim: usize, separation: f64, seed: u64) -> Result<Self> {
        if num_classes < 2 || dim == 0 {
            return Err(Error::invalid(format!(
                "synthetic blobs need >= 2 classes and dim >= 1 (got {num_classes}, {dim})"
            )));
        }
        if !(separation.is_finite() && separation >= 0.0) {
            return Err(Error::invalid(format!("invalid class separation {separation}")));
        }
        let mut rng = stream_rng(seed, Stream::DataModel);
        let mut means = Tensor2D::zeros(num_classes, dim);
        for y in 0..num_classes {
            let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            for (m, d) in means.row_mut(y).iter_mut().zip(&dir) {
                *m = separation * d / norm;
            }
        }
        Ok(Self { means })
    }

    pub fn means(&self) -> &Tensor2D {
        &self.means
    }

    /// `n_per_class` samples per class, class-major order.
    pub fn sample<R: Rng + ?Sized>(&self, n_per_class: usize, rng: &mut R) -> Result<Dataset> {
        let (m, d) = self.means.shape();
        let mut features = Tensor2D::zeros(m * n_per_class, d);
        let mut labels = Vec::with_capacity(m * n_per_class);
        for y in 0..m {
            for i in 0..n_per_class {
                let row = features.row_mut(y * n_per_class + i);
                for (v, mu) in row.iter_mut().zip(self.means.row(y)) {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = mu + z;
                }
                labels.push(y);
            }
        }
        Dataset::new(features, labels, m)
    }
}

/// Gaussian-blob training set, deterministic under `seed`.
pub fn synth_dataset(
    num_classes: usize,
    dim: usize,
    n_per_class: usize,
    class_separation: f64,
    seed: u64,
) -> Result<Dataset> {
    SyntheticBlobs::new(num_classes, dim, class_separation, seed)?
        .sample(n_per_class, &mut stream_rng(seed, Stream::TrainSamples))
}

/// Held-out companion of [`synth_dataset`]: same class means, fresh noise.
pub fn synth_test_dataset(
    num_classes: usize,
    dim: usize,
    n_per_class: usize,
    class_separation: f64,
    seed: u64,
) -> Result<Dataset> {
    SyntheticBlobs::new(num_classes, dim, class_separation, seed)?
        .sample(n_per_class, &mut stream_rng(seed, Stream::TestSamples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_is_deterministic_with_exact_class_counts() {
        let a = synth_dataset(4, 6, 25, 3.0, 11).unwrap();
        let b = synth_dataset(4, 6, 25, 3.0, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![25; 4]);
        let c = synth_dataset(4, 6, 25, 3.0, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn test_split_shares_means_not_noise() {
        let train = synth_dataset(3, 4, 10, 2.0, 1).unwrap();
        let test = synth_test_dataset(3, 4, 10, 2.0, 1).unwrap();
        assert_ne!(train.features(), test.features());
        assert_eq!(train.labels(), test.labels());
    }

    #[test]
    fn dataset_validation() {
        let f = Tensor2D::zeros(2, 3);
        assert!(Dataset::new(f.clone(), vec![0, 2], 2).is_err());
        assert!(Dataset::new(f.clone(), vec![0], 2).is_err());
        assert!(Dataset::new(Tensor2D::zeros(0, 3), vec![], 2).is_err());
        let ds = Dataset::new(f, vec![0, 0], 2).unwrap();
        assert!(ds.ensure_all_classes_present().is_err());
    }

    #[test]
    fn label_distribution_estimates() {
        let d = estimate_label_distribution(&[0, 0, 1, 1], 2).unwrap();
        assert_eq!(d.probs(), &[0.5, 0.5]);
        let d = estimate_label_distribution(&[2, 2, 2], 4).unwrap();
        assert_eq!(d.probs(), &[0.0, 0.0, 1.0, 0.0]);
        assert!(estimate_label_distribution(&[], 2).is_err());
        assert!(estimate_label_distribution(&[3], 2).is_err());
    }
}
