//! Label-skew partitioners.
//!
//! * quantity skew: each label is cut into `ceil(K·α/M)` shards, the shuffled
//!   shard list is dealt round-robin until every client holds `α` shards, so no
//!   client sees more than `α` classes;
//! * Dirichlet skew: client `k` draws `p_k ~ Dir_M(β)`, the per-class column
//!   `p_{·,y}` is renormalised across clients and class `y` is split by
//!   largest-remainder rounding.

use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LabelDistribution;
use crate::rng::{stream_rng, Stream};

use super::{class_counts, Dataset};

/// Number of Dirichlet re-draws allowed when some client ends up empty.
pub const DIRICHLET_MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkewSpec {
    /// Every class dealt evenly across clients.
    Iid,
    Quantity {
        alpha: usize,
    },
    Dirichlet {
        beta: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    client_indices: Vec<Vec<usize>>,
    skew: SkewSpec,
    seed: u64,
}

impl Partition {
    /// Validates disjointness, index range and non-emptiness.
    pub fn new(client_indices: Vec<Vec<usize>>, num_samples: usize, skew: SkewSpec, seed: u64) -> Result<Self> {
        let mut seen = vec![false; num_samples];
        for (k, idx) in client_indices.iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::invalid(format!("client {k} holds no samples")));
            }
            for &i in idx {
                if i >= num_samples {
                    return Err(Error::invalid(format!("client {k}: index {i} out of range")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid(format!("sample {i} assigned twice")));
                }
            }
        }
        Ok(Self {
            client_indices,
            skew,
            seed,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.client_indices.len()
    }

    pub fn client(&self, k: usize) -> &[usize] {
        &self.client_indices[k]
    }

    pub fn clients(&self) -> &[Vec<usize>] {
        &self.client_indices
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.client_indices.iter().map(Vec::len).collect()
    }

    pub fn skew(&self) -> SkewSpec {
        self.skew
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn client_label_counts(&self, dataset: &Dataset, k: usize) -> Vec<u64> {
        let labels: Vec<usize> = self.client(k).iter().map(|&i| dataset.labels()[i]).collect();
        class_counts(&labels, dataset.num_classes())
    }

    /// `P_k(y)` from the client's full local label counts.
    pub fn client_distribution(&self, dataset: &Dataset, k: usize) -> Result<LabelDistribution> {
        LabelDistribution::from_counts(self.client_label_counts(dataset, k))
    }

    pub fn manifest(&self, dataset: &Dataset) -> PartitionManifest {
        PartitionManifest {
            skew: self.skew,
            seed: self.seed,
            num_samples: dataset.len(),
            num_classes: dataset.num_classes(),
            clients: (0..self.num_clients())
                .map(|k| ClientManifest {
                    id: k,
                    indices: self.client_indices[k].clone(),
                    label_counts: self.client_label_counts(dataset, k),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientManifest {
    pub id: usize,
    pub indices: Vec<usize>,
    pub label_counts: Vec<u64>,
}

/// JSON form of a partition: client → index list, plus the skew spec and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub skew: SkewSpec,
    pub seed: u64,
    pub num_samples: usize,
    pub num_classes: usize,
    pub clients: Vec<ClientManifest>,
}

impl PartitionManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            source_name: path.display().to_string(),
            location: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })
    }

    pub fn to_partition(&self) -> Result<Partition> {
        Partition::new(
            self.clients.iter().map(|c| c.indices.clone()).collect(),
            self.num_samples,
            self.skew,
            self.seed,
        )
    }

    /// One line per client: size, number of classes, label histogram.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{} clients, {} samples, {} classes, skew {:?}, seed {}\n",
            self.clients.len(),
            self.num_samples,
            self.num_classes,
            self.skew,
            self.seed
        );
        for c in &self.clients {
            let classes = c.label_counts.iter().filter(|&&n| n > 0).count();
            out.push_str(&format!(
                "client {:>4}: {:>6} samples, {:>3} classes, counts {:?}\n",
                c.id,
                c.indices.len(),
                classes,
                c.label_counts
            ));
        }
        out
    }
}

fn check_clients(num_clients: usize) -> Result<()> {
    if num_clients == 0 {
        return Err(Error::invalid("need at least one client"));
    }
    Ok(())
}

/// Each class's samples are shuffled and dealt round-robin across clients,
/// with a rotating start so client sizes differ by at most one per class.
pub fn partition_iid(dataset: &Dataset, num_clients: usize, seed: u64) -> Result<Partition> {
    check_clients(num_clients)?;
    let mut rng = stream_rng(seed, Stream::Partition);
    let mut clients = vec![Vec::new(); num_clients];
    let mut next = 0;
    for mut idx in dataset.indices_by_class() {
        idx.shuffle(&mut rng);
        for i in idx {
            clients[next].push(i);
            next = (next + 1) % num_clients;
        }
    }
    clients.iter_mut().for_each(|c| c.sort_unstable());
    Partition::new(clients, dataset.len(), SkewSpec::Iid, seed)
}

/// Splits `items` into `parts` contiguous chunks whose sizes differ by at
/// most one, larger chunks first.
fn split_even(items: &[usize], parts: usize) -> Vec<&[usize]> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(&items[start..start + len]);
        start += len;
    }
    out
}

pub fn partition_quantity_skew(dataset: &Dataset, num_clients: usize, alpha: usize, seed: u64) -> Result<Partition> {
    check_clients(num_clients)?;
    let m = dataset.num_classes();
    if alpha == 0 || alpha > m {
        return Err(Error::invalid(format!("alpha must be in 1..={m}, got {alpha}")));
    }
    let shards_per_label = (num_clients * alpha).div_ceil(m);
    let mut rng = stream_rng(seed, Stream::Partition);

    let mut shards: Vec<Vec<usize>> = Vec::with_capacity(shards_per_label * m);
    for mut idx in dataset.indices_by_class() {
        idx.shuffle(&mut rng);
        shards.extend(split_even(&idx, shards_per_label).into_iter().map(<[usize]>::to_vec));
    }
    shards.shuffle(&mut rng);

    let mut clients = vec![Vec::new(); num_clients];
    for (s, shard) in shards.into_iter().take(num_clients * alpha).enumerate() {
        clients[s % num_clients].extend(shard);
    }
    clients.iter_mut().for_each(|c| c.sort_unstable());
    Partition::new(clients, dataset.len(), SkewSpec::Quantity { alpha }, seed)
        .map_err(|e| Error::Config(format!("quantity skew produced an invalid partition: {e}")))
}

/// Largest-remainder rounding of `weights · total` (weights sum to 1).
/// Ties in the fractional part go to the lower index.
pub(crate) fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let ideal: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn sample_dirichlet<R: Rng + ?Sized>(gamma: &Gamma<f64>, m: usize, rng: &mut R) -> Option<Vec<f64>> {
    let draws: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    (sum > 0.0 && sum.is_finite()).then(|| draws.iter().map(|d| d / sum).collect())
}

pub fn partition_dirichlet_skew(dataset: &Dataset, num_clients: usize, beta: f64, seed: u64) -> Result<Partition> {
    check_clients(num_clients)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be > 0, got {beta}")));
    }
    let m = dataset.num_classes();
    let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = stream_rng(seed, Stream::Partition);
    let by_class = dataset.indices_by_class();

    for attempt in 0..=DIRICHLET_MAX_RETRIES {
        let mut props = Vec::with_capacity(num_clients);
        for _ in 0..num_clients {
            match sample_dirichlet(&gamma, m, &mut rng) {
                Some(p) => props.push(p),
                None => break,
            }
        }
        if props.len() == num_clients {
            if let Some(clients) = dirichlet_assign(&by_class, &props, &mut rng) {
                return Partition::new(clients, dataset.len(), SkewSpec::Dirichlet { beta }, seed);
            }
        }
        warn!("dirichlet partition attempt {attempt} left a client empty; re-drawing");
    }
    Err(Error::Config(format!(
        "dirichlet partition (beta = {beta}, K = {num_clients}) left a client empty after {DIRICHLET_MAX_RETRIES} re-draws"
    )))
}

fn dirichlet_assign<R: Rng + ?Sized>(
    by_class: &[Vec<usize>],
    props: &[Vec<f64>],
    rng: &mut R,
) -> Option<Vec<Vec<usize>>> {
    let k = props.len();
    let mut clients = vec![Vec::new(); k];
    for (y, idx) in by_class.iter().enumerate() {
        let column_sum: f64 = props.iter().map(|p| p[y]).sum();
        if column_sum <= 0.0 {
            return None;
        }
        let weights: Vec<f64> = props.iter().map(|p| p[y] / column_sum).collect();
        let counts = largest_remainder(&weights, idx.len());
        let mut shuffled = idx.clone();
        shuffled.shuffle(rng);
        let mut start = 0;
        for (client, n) in clients.iter_mut().zip(counts) {
            client.extend_from_slice(&shuffled[start..start + n]);
            start += n;
        }
    }
    if clients.iter().any(Vec::is_empty) {
        return None;
    }
    clients.iter_mut().for_each(|c| c.sort_unstable());
    Some(clients)
}
