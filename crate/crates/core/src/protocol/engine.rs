use log::{debug, info};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{
    allocate_minibatch_sizes, estimate_label_distribution, sample_minibatch, BatchPlan, Dataset, MinibatchSampler,
    Partition,
};
use crate::error::{Error, Result};
use crate::losses::{LabelDistribution, LossKind};
use crate::nn::{join_models, LayeredModel, ModelPart, ParamGrads};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor2D;

use super::{
    aggregate_client_models, comm_cost, concatenate_activations, scatter_gradients, ActivationBatch, ClientTrace,
    ParticipationMode, ProtocolConfig, ProtocolVariant, RoundMetrics, RoundTrace, Topology,
};

/// Draws the round's participants, sorted ascending.
pub fn select_participants<R: Rng + ?Sized>(
    num_clients: usize,
    rho: f64,
    mode: ParticipationMode,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if num_clients == 0 {
        return Err(Error::invalid("no clients to select from"));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::invalid(format!(
            "participation rate must be in (0, 1], got {rho}"
        )));
    }
    let mut ids = match mode {
        ParticipationMode::FixedFraction => {
            let n = ((rho * num_clients as f64).round() as usize).clamp(1, num_clients);
            index::sample(rng, num_clients, n).into_vec()
        }
        ParticipationMode::Bernoulli => loop {
            let ids: Vec<usize> = (0..num_clients).filter(|_| rng.random_bool(rho)).collect();
            if !ids.is_empty() {
                break ids;
            }
        },
    };
    ids.sort_unstable();
    Ok(ids)
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    /// `P_k` from the client's full local label counts.
    pub prior: LabelDistribution,
    /// Client-side replica `w_{c,k}`.
    pub model: ModelPart,
    sampler: MinibatchSampler,
    rng: ChaCha8Rng,
}

impl ClientState {
    pub fn data_size(&self) -> usize {
        self.sampler.local_indices().len()
    }

    pub fn local_indices(&self) -> &[usize] {
        self.sampler.local_indices()
    }

    fn next_batch(&mut self, train: &Dataset, size: usize) -> Result<(Tensor2D, Vec<usize>)> {
        sample_minibatch(train, &mut self.sampler, size, &mut self.rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    /// Server-side model `w_s`.
    pub server_model: ModelPart,
    /// Global client-side model `w_c`.
    pub client_model: ModelPart,
    /// Rounds completed so far.
    pub round: usize,
}

impl ServerState {
    pub fn global_model(&self) -> Result<LayeredModel> {
        join_models(&self.client_model, &self.server_model)
    }
}

#[derive(Default)]
struct RoundStats {
    loss: Vec<f64>,
    server_norms: Vec<f64>,
    client_norms: Vec<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// A federated training run over one partitioned dataset.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: ProtocolConfig,
    train: Dataset,
    test: Dataset,
    partition: Partition,
    train_prior: LabelDistribution,
    cut_index: usize,
    cut_width: usize,
    server: ServerState,
    clients: Vec<ClientState>,
    participation_rng: ChaCha8Rng,
}

impl Simulation {
    /// `model` supplies the initial weights and the cut. Randomness for
    /// participation and per-client sampling is derived from `seed`.
    pub fn new(
        train: Dataset,
        test: Dataset,
        partition: Partition,
        model: &LayeredModel,
        config: ProtocolConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let input = model.full().input_width().unwrap_or(0);
        if input != train.feature_dim() || input != test.feature_dim() {
            return Err(Error::Config(format!(
                "model input width {input} does not match feature dims (train {}, test {})",
                train.feature_dim(),
                test.feature_dim()
            )));
        }
        if model.num_classes() != train.num_classes() || test.num_classes() != train.num_classes() {
            return Err(Error::Config(format!(
                "model has {} outputs, train data {} classes, test data {}",
                model.num_classes(),
                train.num_classes(),
                test.num_classes()
            )));
        }
        if partition.clients().iter().flatten().any(|&i| i >= train.len()) {
            return Err(Error::Config(
                "partition refers to samples outside the training set".into(),
            ));
        }

        let (client_model, server_model) = model.split()?;
        let clients = (0..partition.num_clients())
            .map(|k| {
                Ok(ClientState {
                    id: k,
                    prior: partition.client_distribution(&train, k)?,
                    model: client_model.clone(),
                    sampler: MinibatchSampler::new(partition.client(k).to_vec())?,
                    rng: stream_rng(seed, Stream::Minibatch(k)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let train_prior = estimate_label_distribution(train.labels(), train.num_classes())?;

        Ok(Self {
            cut_index: model.cut_index(),
            cut_width: model.cut_width(),
            server: ServerState {
                server_model,
                client_model,
                round: 0,
            },
            clients,
            train_prior,
            participation_rng: stream_rng(seed, Stream::Participation),
            config,
            train,
            test,
            partition,
        })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn train_prior(&self) -> &LabelDistribution {
        &self.train_prior
    }

    pub fn global_model(&self) -> Result<LayeredModel> {
        self.server.global_model()
    }

    /// Runs one round of the configured variant.
    pub fn run_round(&mut self, evaluate: bool) -> Result<RoundMetrics> {
        match self.config.variant {
            ProtocolVariant::Scala => self.run_scala_round(evaluate),
            _ => self.run_baseline_round(evaluate),
        }
    }

    /// Runs `rounds` rounds, evaluating every `eval_every` rounds and after
    /// the last one.
    pub fn run(&mut self, rounds: usize) -> Result<Vec<RoundMetrics>> {
        let start = self.server.round;
        let mut out = Vec::with_capacity(rounds);
        for r in 1..=rounds {
            let t = start + r;
            let eval = t.is_multiple_of(self.config.eval_every) || r == rounds;
            out.push(self.run_round(eval)?);
        }
        Ok(out)
    }

    pub fn run_scala_round(&mut self, evaluate: bool) -> Result<RoundMetrics> {
        if self.config.variant != ProtocolVariant::Scala {
            return Err(Error::invalid(format!(
                "run_scala_round called on a {} simulation",
                self.config.variant
            )));
        }
        self.round(evaluate)
    }

    pub fn run_baseline_round(&mut self, evaluate: bool) -> Result<RoundMetrics> {
        if self.config.variant == ProtocolVariant::Scala {
            return Err(Error::invalid("run_baseline_round called on a scala simulation"));
        }
        self.round(evaluate)
    }

    fn round(&mut self, evaluate: bool) -> Result<RoundMetrics> {
        let t = self.server.round + 1;
        self.round_inner(t, evaluate).map_err(|e| Error::Round {
            round: t,
            cause: Box::new(e),
        })
    }

    fn round_inner(&mut self, t: usize, evaluate: bool) -> Result<RoundMetrics> {
        let participants = select_participants(
            self.partition.num_clients(),
            self.config.participation,
            self.config.participation_mode,
            &mut self.participation_rng,
        )?;
        if participants.len() > self.config.batch_size {
            return Err(Error::Config(format!(
                "{} participants but batch size {}",
                participants.len(),
                self.config.batch_size
            )));
        }
        let plan = allocate_minibatch_sizes(&self.partition, &participants, self.config.batch_size)?;
        debug!(
            "round {t}: participants {:?}, batch sizes {:?}",
            plan.participants, plan.batch_sizes
        );

        let stats = match self.config.variant.topology() {
            Topology::Concatenated => self.concatenated_round(&plan)?,
            Topology::PerClient => self.per_client_round(&plan)?,
            Topology::FullModel => self.full_model_round(&plan)?,
        };
        self.server.round = t;

        let trace = RoundTrace {
            variant: self.config.variant,
            local_iters: self.config.local_iters,
            cut_width: self.cut_width,
            client_model_params: self.server.client_model.num_params(),
            full_model_params: self.server.client_model.num_params() + self.server.server_model.num_params(),
            clients: plan
                .participants
                .iter()
                .zip(&plan.batch_sizes)
                .map(|(&client, &batch_size)| ClientTrace { client, batch_size })
                .collect(),
        };
        let bytes = comm_cost(&trace, self.config.bytes_per_scalar);

        let eval = if evaluate {
            let model = self.global_model()?;
            Some(super::evaluate(model.full(), &self.test, &self.train_prior)?)
        } else {
            None
        };
        let metrics = RoundMetrics {
            t,
            variant: self.config.variant,
            participants: plan.participants,
            train_loss: mean(&stats.loss),
            eval,
            grad_norm_s: mean(&stats.server_norms),
            grad_norm_c: mean(&stats.client_norms),
            up_bytes: bytes.uplink,
            down_bytes: bytes.downlink,
        };
        if let Some(e) = &metrics.eval {
            info!(
                "{} round {t}: loss {:.4}, acc {:.4}, bal_acc {:.4}",
                metrics.variant,
                metrics.train_loss.unwrap_or(f64::NAN),
                e.acc,
                e.bal_acc
            );
        }
        Ok(metrics)
    }

    /// SCALA and CA-SFL: one server-side model trained on the concatenated
    /// activations of all participants.
    fn concatenated_round(&mut self, plan: &BatchPlan) -> Result<RoundStats> {
        let eta = self.config.learning_rate;
        let losses = self.config.losses;
        let iters = self.config.local_iters;
        let num_classes = self.train.num_classes();
        let total = plan.total as f64;
        let train = &self.train;
        let mut w_s = self.server.server_model.clone();
        let mut active = active_clients(&mut self.clients, &self.server.client_model, plan);
        let mut stats = RoundStats::default();

        for _ in 0..iters {
            let mut batches = Vec::with_capacity(active.len());
            let mut caches = Vec::with_capacity(active.len());
            for (c, &b_k) in active.iter_mut().zip(&plan.batch_sizes) {
                let (x, y) = c.next_batch(train, b_k)?;
                let (a, cache) = c.model.forward(&x)?;
                batches.push(ActivationBatch {
                    client: c.id,
                    activations: a,
                    labels: y,
                });
                caches.push(cache);
            }
            let concat = concatenate_activations(&batches)?;
            drop(batches);

            let (logits, server_cache) = w_s.forward(&concat.activations)?;
            let p_s = estimate_label_distribution(&concat.labels, num_classes)?;
            let server_loss = losses.server.evaluate(&logits, &concat.labels, &p_s)?;
            let (g_s, d_concat) = w_s.backward(&server_cache, &server_loss.logit_grad)?;

            // Gradients sent back to clients come from w_s before its update.
            let client_grad = if losses.client == LossKind::Plain && losses.server == LossKind::Plain {
                d_concat
            } else {
                let mut bound = Tensor2D::zeros(logits.rows(), logits.cols());
                for (seg, c) in concat.offsets.iter().zip(&active) {
                    let slice = logits.slice_rows(seg.start, seg.len)?;
                    let out = losses.client.evaluate(&slice, concat.labels_of(seg), &c.prior)?;
                    let scale = seg.len as f64 / total;
                    for r in 0..seg.len {
                        for (dst, &g) in bound.row_mut(seg.start + r).iter_mut().zip(out.logit_grad.row(r)) {
                            *dst = g * scale;
                        }
                    }
                }
                w_s.backward(&server_cache, &bound)?.1
            };
            w_s.sgd_step(&g_s, eta)?;
            stats.loss.push(server_loss.value);
            stats.server_norms.push(g_s.norm());

            let pieces = scatter_gradients(&client_grad, &concat.offsets)?;
            for ((c, cache), g_k) in active.iter_mut().zip(&caches).zip(&pieces) {
                let (g_c, _) = c.model.backward(cache, g_k)?;
                c.model.sgd_step(&g_c, eta)?;
                stats.client_norms.push(g_c.norm());
            }
        }

        let models: Vec<&ModelPart> = active.iter().map(|c| &c.model).collect();
        let sizes: Vec<usize> = active.iter().map(|c| c.data_size()).collect();
        let w_c = aggregate_client_models(&models, &sizes)?;
        self.server.client_model = w_c;
        self.server.server_model = w_s;
        Ok(stats)
    }

    /// SplitFedV1 and LLA-SFL: each participant trains against its own
    /// server-side replica; both sides are averaged at round end.
    fn per_client_round(&mut self, plan: &BatchPlan) -> Result<RoundStats> {
        let eta = self.config.learning_rate;
        let kind = self.config.losses.client;
        let iters = self.config.local_iters;
        let total = plan.total as f64;
        let train = &self.train;
        let mut replicas = vec![self.server.server_model.clone(); plan.participants.len()];
        let mut active = active_clients(&mut self.clients, &self.server.client_model, plan);
        let mut stats = RoundStats::default();

        for _ in 0..iters {
            let mut loss = 0.0;
            for ((c, w_s), &b_k) in active.iter_mut().zip(replicas.iter_mut()).zip(&plan.batch_sizes) {
                let (x, y) = c.next_batch(train, b_k)?;
                let (a, client_cache) = c.model.forward(&x)?;
                let (logits, server_cache) = w_s.forward(&a)?;
                let out = kind.evaluate(&logits, &y, &c.prior)?;
                let (g_s, g_a) = w_s.backward(&server_cache, &out.logit_grad)?;
                w_s.sgd_step(&g_s, eta)?;
                let (g_c, _) = c.model.backward(&client_cache, &g_a)?;
                c.model.sgd_step(&g_c, eta)?;
                loss += out.value * b_k as f64 / total;
                stats.server_norms.push(g_s.norm());
                stats.client_norms.push(g_c.norm());
            }
            stats.loss.push(loss);
        }

        let sizes: Vec<usize> = active.iter().map(|c| c.data_size()).collect();
        let models: Vec<&ModelPart> = active.iter().map(|c| &c.model).collect();
        let w_c = aggregate_client_models(&models, &sizes)?;
        let replica_refs: Vec<&ModelPart> = replicas.iter().collect();
        let w_s = aggregate_client_models(&replica_refs, &sizes)?;
        self.server.client_model = w_c;
        self.server.server_model = w_s;
        Ok(stats)
    }

    /// FedAvg: clients train the whole network locally.
    fn full_model_round(&mut self, plan: &BatchPlan) -> Result<RoundStats> {
        let eta = self.config.learning_rate;
        let kind = self.config.losses.client;
        let iters = self.config.local_iters;
        let total = plan.total as f64;
        let cut = self.cut_index;
        let global = self.global_model()?;
        let train = &self.train;
        let mut locals = vec![global.full().clone(); plan.participants.len()];
        let mut active = active_clients(&mut self.clients, &self.server.client_model, plan);
        let mut stats = RoundStats::default();

        for _ in 0..iters {
            let mut loss = 0.0;
            for ((c, w), &b_k) in active.iter_mut().zip(locals.iter_mut()).zip(&plan.batch_sizes) {
                let (x, y) = c.next_batch(train, b_k)?;
                let (logits, cache) = w.forward(&x)?;
                let out = kind.evaluate(&logits, &y, &c.prior)?;
                let (grads, _) = w.backward(&cache, &out.logit_grad)?;
                w.sgd_step(&grads, eta)?;
                loss += out.value * b_k as f64 / total;
                let (client_part, server_part) = grads.layers.split_at(cut);
                stats.client_norms.push(partial_norm(client_part));
                stats.server_norms.push(partial_norm(server_part));
            }
            stats.loss.push(loss);
        }

        let sizes: Vec<usize> = active.iter().map(|c| c.data_size()).collect();
        let refs: Vec<&ModelPart> = locals.iter().collect();
        let averaged = aggregate_client_models(&refs, &sizes)?;
        let (w_c, w_s) = LayeredModel::new(averaged.layers().to_vec(), cut)?.split()?;
        for c in active.iter_mut() {
            c.model.clone_from(&w_c);
        }
        self.server.client_model = w_c;
        self.server.server_model = w_s;
        Ok(stats)
    }
}

/// Participants in plan order, each reset to the global `w_c`.
fn active_clients<'a>(clients: &'a mut [ClientState], w_c: &ModelPart, plan: &BatchPlan) -> Vec<&'a mut ClientState> {
    let mut active: Vec<&mut ClientState> = clients
        .iter_mut()
        .filter(|c| plan.participants.binary_search(&c.id).is_ok())
        .collect();
    for c in active.iter_mut() {
        c.model.clone_from(w_c);
    }
    active
}

fn partial_norm(layers: &[Option<crate::nn::Dense>]) -> f64 {
    ParamGrads {
        layers: layers.to_vec(),
    }
    .norm()
}
