//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [dataset]
//! source = "synthetic"        # or "csv", "idx"
//! num_classes = 10
//! feature_dim = 20
//!
//! [federation]
//! clients = 20
//! participation = 0.2
//! skew = "quantity"           # or "iid", "dirichlet"
//! alpha = 2
//!
//! [model]
//! hidden = [32, 32]
//! cut_index = 2
//!
//! [training]
//! variants = ["scala", "splitfed-v1"]
//! rounds = 200
//!
//! [output]
//! dir = "runs/demo"
//! ```
//!
//! Every key is optional; missing keys take the defaults below. Unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SkewSpec;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::protocol::{LossPlan, ParticipationMode, ProtocolConfig, ProtocolVariant};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub federation: FederationConfig,
    pub model: ModelConfig,
    pub training: TrainingSection,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    #[default]
    Synthetic,
    /// `f0,…,f{d-1},label` with a header row.
    Csv,
    /// IDX ubyte image file plus label file.
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub num_classes: usize,
    /// Synthetic only.
    pub feature_dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Radius of the synthetic class means (unit noise).
    pub class_separation: f64,
    /// Training file (CSV, or IDX images).
    pub path: Option<PathBuf>,
    /// IDX label file.
    pub labels_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub test_labels_path: Option<PathBuf>,
    /// Stratified share held out for evaluation when no test file is given.
    pub holdout_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            num_classes: 10,
            feature_dim: 20,
            train_per_class: 200,
            test_per_class: 100,
            class_separation: 2.0,
            path: None,
            labels_path: None,
            test_path: None,
            test_labels_path: None,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkewKind {
    Iid,
    #[default]
    Quantity,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub clients: usize,
    pub participation: f64,
    pub participation_mode: ParticipationMode,
    pub skew: SkewKind,
    /// Classes per client under quantity skew.
    pub alpha: usize,
    /// Dirichlet concentration.
    pub beta: f64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            clients: 100,
            participation: 0.1,
            participation_mode: ParticipationMode::FixedFraction,
            skew: SkewKind::Quantity,
            alpha: 2,
            beta: 0.5,
        }
    }
}

impl FederationConfig {
    pub fn skew_spec(&self) -> SkewSpec {
        match self.skew {
            SkewKind::Iid => SkewSpec::Iid,
            SkewKind::Quantity => SkewSpec::Quantity { alpha: self.alpha },
            SkewKind::Dirichlet => SkewSpec::Dirichlet { beta: self.beta },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths; each is followed by a ReLU.
    pub hidden: Vec<usize>,
    /// Number of layers (dense and ReLU both count) on the client side.
    pub cut_index: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            cut_index: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub variants: Vec<ProtocolVariant>,
    pub rounds: usize,
    pub batch_size: usize,
    pub local_iters: usize,
    pub learning_rate: f64,
    pub eval_every: usize,
    /// Overrides the variant's server-side loss.
    pub server_loss: Option<LossKind>,
    /// Overrides the variant's client-bound loss.
    pub client_loss: Option<LossKind>,
    pub bytes_per_scalar: u64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            variants: vec![ProtocolVariant::Scala],
            rounds: 200,
            batch_size: 320,
            local_iters: 20,
            learning_rate: 0.01,
            eval_every: 10,
            server_loss: None,
            client_loss: None,
            bytes_per_scalar: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

fn config_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

impl TrainingConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainingConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// `[input, hidden.., classes]`.
    pub fn widths(&self, input_dim: usize) -> Vec<usize> {
        let mut w = vec![input_dim];
        w.extend_from_slice(&self.model.hidden);
        w.push(self.dataset.num_classes);
        w
    }

    pub fn protocol_config(&self, variant: ProtocolVariant) -> ProtocolConfig {
        let defaults = variant.default_losses();
        ProtocolConfig {
            variant,
            losses: LossPlan {
                server: self.training.server_loss.unwrap_or(defaults.server),
                client: self.training.client_loss.unwrap_or(defaults.client),
            },
            participation: self.federation.participation,
            participation_mode: self.federation.participation_mode,
            batch_size: self.training.batch_size,
            local_iters: self.training.local_iters,
            learning_rate: self.training.learning_rate,
            eval_every: self.training.eval_every,
            bytes_per_scalar: self.training.bytes_per_scalar,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.num_classes < 2 {
            return Err(config_err(
                "dataset.num_classes",
                format!("must be >= 2, got {}", d.num_classes),
            ));
        }
        match d.source {
            DataSource::Synthetic => {
                if d.feature_dim == 0 {
                    return Err(config_err("dataset.feature_dim", "must be >= 1"));
                }
                if d.train_per_class == 0 || d.test_per_class == 0 {
                    return Err(config_err(
                        "dataset.train_per_class",
                        "per-class sample counts must be >= 1",
                    ));
                }
                if !(d.class_separation.is_finite() && d.class_separation >= 0.0) {
                    return Err(config_err(
                        "dataset.class_separation",
                        format!("invalid value {}", d.class_separation),
                    ));
                }
            }
            DataSource::Csv => {
                if d.path.is_none() {
                    return Err(config_err("dataset.path", "required for csv data"));
                }
            }
            DataSource::Idx => {
                if d.path.is_none() || d.labels_path.is_none() {
                    return Err(config_err("dataset.path", "idx data needs both path and labels_path"));
                }
                if d.test_path.is_some() != d.test_labels_path.is_some() {
                    return Err(config_err(
                        "dataset.test_labels_path",
                        "idx test data needs both test_path and test_labels_path",
                    ));
                }
            }
        }
        if d.source != DataSource::Synthetic
            && d.test_path.is_none()
            && !(d.holdout_fraction > 0.0 && d.holdout_fraction < 1.0)
        {
            return Err(config_err(
                "dataset.holdout_fraction",
                format!("must be in (0, 1), got {}", d.holdout_fraction),
            ));
        }

        let f = &self.federation;
        if f.clients == 0 {
            return Err(config_err("federation.clients", "must be >= 1"));
        }
        if !(f.participation > 0.0 && f.participation <= 1.0) {
            return Err(config_err(
                "federation.participation",
                format!("must be in (0, 1], got {}", f.participation),
            ));
        }
        match f.skew {
            SkewKind::Quantity if f.alpha == 0 || f.alpha > d.num_classes => {
                return Err(config_err(
                    "federation.alpha",
                    format!("must be in 1..={}, got {}", d.num_classes, f.alpha),
                ));
            }
            SkewKind::Dirichlet if !(f.beta > 0.0 && f.beta.is_finite()) => {
                return Err(config_err("federation.beta", format!("must be > 0, got {}", f.beta)));
            }
            _ => {}
        }

        let m = &self.model;
        if m.hidden.contains(&0) {
            return Err(config_err("model.hidden", "widths must be >= 1"));
        }
        let layers = 2 * m.hidden.len() + 1;
        if m.cut_index == 0 || m.cut_index >= layers {
            return Err(config_err(
                "model.cut_index",
                format!(
                    "must satisfy 1 <= cut_index < {layers} for {} hidden layers",
                    m.hidden.len()
                ),
            ));
        }

        let t = &self.training;
        if t.variants.is_empty() {
            return Err(config_err("training.variants", "at least one variant is required"));
        }
        if t.batch_size == 0 {
            return Err(config_err("training.batch_size", "must be >= 1"));
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(config_err(
                "training.learning_rate",
                format!("must be > 0, got {}", t.learning_rate),
            ));
        }
        if t.eval_every == 0 {
            return Err(config_err("training.eval_every", "must be >= 1"));
        }
        if t.bytes_per_scalar == 0 {
            return Err(config_err("training.bytes_per_scalar", "must be >= 1"));
        }
        let per_round = ((f.participation * f.clients as f64).round() as usize).max(1);
        if f.participation_mode == ParticipationMode::FixedFraction && t.batch_size < per_round {
            return Err(config_err(
                "training.batch_size",
                format!(
                    "{} is smaller than the {per_round} participants per round",
                    t.batch_size
                ),
            ));
        }
        Ok(())
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<TrainingConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    TrainingConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
