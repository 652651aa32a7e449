//! Config-driven runs: data, partition, model init, one simulation per
//! variant, and the files written for each.
//!
//! Output directory layout:
//!
//! ```text
//! <dir>/partition.json
//! <dir>/<variant>_metrics.csv
//! <dir>/<variant>_metrics.ndjson
//! <dir>/manifest.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, TrainingConfig};
use crate::data::{
    load_dataset, partition_dirichlet_skew, partition_iid, partition_quantity_skew, synth_dataset, synth_test_dataset,
    DataFormat, Dataset, Partition, PartitionManifest, SkewSpec,
};
use crate::error::{Error, Result};
use crate::nn::LayeredModel;
use crate::protocol::{metrics_csv, metrics_ndjson, ProtocolVariant, RoundMetrics, Simulation};
use crate::rng::{stream_rng, Stream};
use crate::theory::{run_sweep, ClassifierUpdateReport, SweepConfig};

/// Everything a run needs besides the protocol settings.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
    pub model: LayeredModel,
}

/// Builds data, partition and initial weights from `cfg`. All variants of
/// one run start from this same state.
pub fn prepare(cfg: &TrainingConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    let partition = make_partition(&train, cfg.federation.clients, cfg.federation.skew_spec(), cfg.seed)?;
    let widths = cfg.widths(train.feature_dim());
    let model = LayeredModel::mlp(
        &widths,
        cfg.model.cut_index,
        &mut stream_rng(cfg.seed, Stream::ModelInit),
    )?;
    Ok(Prepared {
        train,
        test,
        partition,
        model,
    })
}

pub fn make_partition(dataset: &Dataset, clients: usize, skew: SkewSpec, seed: u64) -> Result<Partition> {
    match skew {
        SkewSpec::Iid => partition_iid(dataset, clients, seed),
        SkewSpec::Quantity { alpha } => partition_quantity_skew(dataset, clients, alpha, seed),
        SkewSpec::Dirichlet { beta } => partition_dirichlet_skew(dataset, clients, beta, seed),
    }
}

fn load_data(cfg: &TrainingConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.dataset;
    let m = d.num_classes;
    let required = |p: &Option<PathBuf>, key: &str| {
        p.clone()
            .ok_or_else(|| Error::Config(format!("dataset.{key} is required")))
    };
    let (train, test) = match d.source {
        DataSource::Synthetic => {
            let train = synth_dataset(m, d.feature_dim, d.train_per_class, d.class_separation, cfg.seed)?;
            let test = synth_test_dataset(m, d.feature_dim, d.test_per_class, d.class_separation, cfg.seed)?;
            return Ok((train, test));
        }
        DataSource::Csv => {
            let train = load_dataset(&required(&d.path, "path")?, &DataFormat::CsvLabeled, Some(m))?;
            let test = match &d.test_path {
                Some(p) => Some(load_dataset(p, &DataFormat::CsvLabeled, Some(m))?),
                None => None,
            };
            (train, test)
        }
        DataSource::Idx => {
            let format = DataFormat::IdxPair {
                labels: required(&d.labels_path, "labels_path")?,
            };
            let train = load_dataset(&required(&d.path, "path")?, &format, Some(m))?;
            let test = match (&d.test_path, &d.test_labels_path) {
                (Some(images), Some(labels)) => Some(load_dataset(
                    images,
                    &DataFormat::IdxPair { labels: labels.clone() },
                    Some(m),
                )?),
                _ => None,
            };
            (train, test)
        }
    };
    match test {
        Some(test) => Ok((train, test)),
        None => stratified_holdout(&train, d.holdout_fraction, cfg.seed),
    }
}

/// Moves `round(fraction · n_y)` samples of every class (at least one, when
/// the class has two or more) into a held-out set.
pub fn stratified_holdout(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "holdout fraction must be in (0, 1), got {fraction}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::TestSamples);
    let (mut keep, mut held) = (Vec::new(), Vec::new());
    for mut idx in dataset.indices_by_class() {
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let mut n = (fraction * idx.len() as f64).round() as usize;
        if idx.len() >= 2 {
            n = n.clamp(1, idx.len() - 1);
        } else {
            n = 0;
        }
        held.extend_from_slice(&idx[..n]);
        keep.extend_from_slice(&idx[n..]);
    }
    if held.is_empty() {
        return Err(Error::Config("holdout left no evaluation samples".into()));
    }
    keep.sort_unstable();
    held.sort_unstable();
    Ok((dataset.subset(&keep)?, dataset.subset(&held)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantOutputs {
    pub variant: ProtocolVariant,
    pub metrics_csv: PathBuf,
    pub metrics_ndjson: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub config: TrainingConfig,
    pub version: String,
    pub partition: PathBuf,
    pub outputs: Vec<VariantOutputs>,
    /// Milliseconds since the Unix epoch.
    pub started_ms: u128,
    pub finished_ms: u128,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs every configured variant for `training.rounds` rounds and writes the
/// metrics, partition and manifest under `output.dir`.
pub fn run_experiment(cfg: &TrainingConfig) -> Result<ExperimentManifest> {
    let started_ms = now_ms();
    let prepared = prepare(cfg)?;
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let partition_path = dir.join("partition.json");
    prepared.partition.manifest(&prepared.train).save(&partition_path)?;

    let m = prepared.train.num_classes();
    let mut outputs = Vec::new();
    for &variant in &cfg.training.variants {
        info!("running {variant} for {} rounds", cfg.training.rounds);
        let rows = run_variant(cfg, &prepared, variant)?;
        let csv = dir.join(format!("{variant}_metrics.csv"));
        let ndjson = dir.join(format!("{variant}_metrics.ndjson"));
        write(&csv, &metrics_csv(&rows, m))?;
        write(&ndjson, &metrics_ndjson(&rows)?)?;
        outputs.push(VariantOutputs {
            variant,
            metrics_csv: csv,
            metrics_ndjson: ndjson,
        });
    }

    let manifest = ExperimentManifest {
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        partition: partition_path,
        outputs,
        started_ms,
        finished_ms: now_ms(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
    write(&dir.join("manifest.json"), &(json + "\n"))?;
    Ok(manifest)
}

/// One variant's full metric history, without touching the filesystem.
pub fn run_variant(cfg: &TrainingConfig, prepared: &Prepared, variant: ProtocolVariant) -> Result<Vec<RoundMetrics>> {
    let mut sim = Simulation::new(
        prepared.train.clone(),
        prepared.test.clone(),
        prepared.partition.clone(),
        &prepared.model,
        cfg.protocol_config(variant),
        cfg.seed,
    )?;
    sim.run(cfg.training.rounds)
}

#[derive(Debug, Clone)]
pub struct TheoryOutcome {
    pub report: ClassifierUpdateReport,
    pub failures: Vec<String>,
    pub csv_path: Option<PathBuf>,
}

impl TheoryOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs the sweep, optionally writing `theory_report.csv` into `out_dir`.
pub fn run_theory_checks(sweep: &SweepConfig, out_dir: Option<&Path>) -> Result<TheoryOutcome> {
    let report = run_sweep(sweep)?;
    let csv_path = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("theory_report.csv");
            report.write_csv(&p)?;
            Some(p)
        }
        None => None,
    };
    let failures = report.failures();
    Ok(TheoryOutcome {
        report,
        failures,
        csv_path,
    })
}

/// Loads and validates a partition manifest and returns its summary.
pub fn inspect_partition(path: &Path) -> Result<String> {
    let manifest = PartitionManifest::load(path)?;
    manifest.to_partition()?;
    for c in &manifest.clients {
        if c.label_counts.len() != manifest.num_classes {
            return Err(Error::InvalidData(format!(
                "client {} has {} label counts for {} classes",
                c.id,
                c.label_counts.len(),
                manifest.num_classes
            )));
        }
        let total: u64 = c.label_counts.iter().sum();
        if total != c.indices.len() as u64 {
            return Err(Error::InvalidData(format!(
                "client {}: label counts sum to {total} but it holds {} samples",
                c.id,
                c.indices.len()
            )));
        }
    }
    Ok(manifest.summary())
}
