//! Round engine for split federated learning.
//!
//! Five protocol variants share one [`Simulation`]:
//!
//! | variant       | server-side model                         | loss (server / client-bound) |
//! |---------------|-------------------------------------------|------------------------------|
//! | `scala`       | one model, trained on concatenated batch  | adjusted by `P_s` / by `P_k` |
//! | `ca-sfl`      | one model, trained on concatenated batch  | plain / plain                |
//! | `lla-sfl`     | one replica per client, averaged per round| adjusted by `P_k`            |
//! | `splitfed-v1` | one replica per client, averaged per round| plain                        |
//! | `fedavg`      | no split; full model trained on clients   | plain                        |
//!
//! `P_s` is the label histogram of the concatenated minibatch of the current
//! local iteration; `P_k` is client `k`'s full local label histogram.

mod aggregate;
mod comm;
mod concat;
mod engine;
mod metrics;

pub use aggregate::aggregate_client_models;
pub use comm::{client_comm_cost, comm_cost, ClientTrace, CommBytes, RoundTrace};
pub use concat::{concatenate_activations, scatter_gradients, ActivationBatch, ConcatenatedBatch, Segment};
pub use engine::{select_participants, ClientState, ServerState, Simulation};
pub use metrics::{
    balanced_accuracy, csv_header, csv_row, evaluate, metrics_csv, metrics_ndjson, EvalMetrics, RoundMetrics,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProtocolVariant {
    #[serde(rename = "scala")]
    Scala,
    #[serde(rename = "ca-sfl")]
    CaSfl,
    #[serde(rename = "lla-sfl")]
    LlaSfl,
    #[serde(rename = "splitfed-v1")]
    SplitFedV1,
    #[serde(rename = "fedavg")]
    FedAvg,
}

/// How the server-side computation is organised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// One server-side model fed the concatenated activations.
    Concatenated,
    /// One server-side replica per participant, aggregated at round end.
    PerClient,
    /// No split during training.
    FullModel,
}

impl ProtocolVariant {
    pub const ALL: [ProtocolVariant; 5] = [
        ProtocolVariant::Scala,
        ProtocolVariant::CaSfl,
        ProtocolVariant::LlaSfl,
        ProtocolVariant::SplitFedV1,
        ProtocolVariant::FedAvg,
    ];

    pub fn topology(self) -> Topology {
        match self {
            ProtocolVariant::Scala | ProtocolVariant::CaSfl => Topology::Concatenated,
            ProtocolVariant::LlaSfl | ProtocolVariant::SplitFedV1 => Topology::PerClient,
            ProtocolVariant::FedAvg => Topology::FullModel,
        }
    }

    pub fn default_losses(self) -> LossPlan {
        let (server, client) = match self {
            ProtocolVariant::Scala => (LossKind::Adjusted, LossKind::Adjusted),
            ProtocolVariant::LlaSfl => (LossKind::Adjusted, LossKind::Adjusted),
            ProtocolVariant::CaSfl | ProtocolVariant::SplitFedV1 | ProtocolVariant::FedAvg => {
                (LossKind::Plain, LossKind::Plain)
            }
        };
        LossPlan { server, client }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProtocolVariant::Scala => "scala",
            ProtocolVariant::CaSfl => "ca-sfl",
            ProtocolVariant::LlaSfl => "lla-sfl",
            ProtocolVariant::SplitFedV1 => "splitfed-v1",
            ProtocolVariant::FedAvg => "fedavg",
        }
    }
}

impl fmt::Display for ProtocolVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for ProtocolVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProtocolVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected one of scala, ca-sfl, lla-sfl, splitfed-v1, fedavg)"
                ))
            })
    }
}

/// Losses used on each side.
///
/// With the concatenated topology `server` drives the server-side update and
/// `client` the gradients sent back to clients. The per-client and full-model
/// topologies train every replica with `client`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossPlan {
    pub server: LossKind,
    pub client: LossKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParticipationMode {
    /// Exactly `max(1, round(ρK))` distinct clients per round.
    #[default]
    FixedFraction,
    /// Each client joins independently with probability ρ; empty draws are
    /// repeated.
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub variant: ProtocolVariant,
    pub losses: LossPlan,
    pub participation: f64,
    pub participation_mode: ParticipationMode,
    pub batch_size: usize,
    pub local_iters: usize,
    pub learning_rate: f64,
    /// Evaluate every this many rounds (and on the last round of a run).
    pub eval_every: usize,
    pub bytes_per_scalar: u64,
}

impl ProtocolConfig {
    pub fn new(variant: ProtocolVariant) -> Self {
        Self {
            variant,
            losses: variant.default_losses(),
            participation: 0.1,
            participation_mode: ParticipationMode::FixedFraction,
            batch_size: 320,
            local_iters: 20,
            learning_rate: 0.01,
            eval_every: 10,
            bytes_per_scalar: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::Config(format!(
                "participation must be in (0, 1], got {}",
                self.participation
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if self.bytes_per_scalar == 0 {
            return Err(Error::Config("bytes_per_scalar must be >= 1".into()));
        }
        Ok(())
    }
}
