//! Deterministic simulator for split federated learning.
//!
//! A network is cut into a client-side part and a server-side part. Each
//! round a subset of clients runs its part on a local minibatch and uploads
//! the activations; the server trains its part and sends gradients back.
//! SCALA concatenates the uploaded activations into one server batch and
//! trains both sides with logit-adjusted cross-entropy, which counters label
//! skew across clients. Four baselines share the same engine: CA-SFL,
//! LLA-SFL, SplitFedV1 and FedAvg.
//!
//! Modules:
//!
//! * [`nn`]: dense/ReLU networks with hand-written backprop and SGD.
//! * [`losses`]: cross-entropy, logit-adjusted cross-entropy, predictions.
//! * [`data`]: datasets, label-skew partitioners, minibatch planning.
//! * [`protocol`]: the round engine, aggregation, metrics, communication cost.
//! * [`theory`]: closed-form classifier updates checked against backprop.
//! * [`config`] and [`experiment`]: TOML-driven runs that write CSV/NDJSON.
//!
//! ```
//! use scala_sfl::data::{partition_quantity_skew, synth_dataset, synth_test_dataset};
//! use scala_sfl::nn::LayeredModel;
//! use scala_sfl::protocol::{ProtocolConfig, ProtocolVariant, Simulation};
//! use scala_sfl::rng::{stream_rng, Stream};
//!
//! let train = synth_dataset(4, 8, 30, 3.0, 1)?;
//! let test = synth_test_dataset(4, 8, 10, 3.0, 1)?;
//! let partition = partition_quantity_skew(&train, 6, 2, 1)?;
//! let model = LayeredModel::mlp(&[8, 16, 4], 2, &mut stream_rng(1, Stream::ModelInit))?;
//!
//! let mut cfg = ProtocolConfig::new(ProtocolVariant::Scala);
//! cfg.participation = 0.5;
//! cfg.batch_size = 24;
//! cfg.local_iters = 2;
//! cfg.learning_rate = 0.05;
//!
//! let mut sim = Simulation::new(train, test, partition, &model, cfg, 1)?;
//! let history = sim.run(5)?;
//! assert!(history.last().unwrap().eval.is_some());
//! # Ok::<(), scala_sfl::Error>(())
//! ```

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod nn;
pub mod protocol;
pub mod rng;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
