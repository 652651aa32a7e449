//! Per-round communication accounting.
//!
//! For the split variants a participating client sends, per local iteration,
//! its activations `A_k` (`B_k × cut_width` scalars) and labels `Y_k` (`B_k`
//! scalars), and receives `G_k` (same shape as `A_k`). Once per round it
//! downloads the global client-side model and uploads its replica. FedAvg
//! moves the full model in each direction and nothing else.

use serde::{Deserialize, Serialize};

use super::ProtocolVariant;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientTrace {
    pub client: usize,
    pub batch_size: usize,
}

/// Everything needed to price one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub variant: ProtocolVariant,
    pub local_iters: usize,
    pub cut_width: usize,
    pub client_model_params: usize,
    pub full_model_params: usize,
    pub clients: Vec<ClientTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CommBytes {
    pub uplink: u64,
    pub downlink: u64,
}

impl std::ops::Add for CommBytes {
    type Output = CommBytes;

    fn add(self, rhs: CommBytes) -> CommBytes {
        CommBytes {
            uplink: self.uplink + rhs.uplink,
            downlink: self.downlink + rhs.downlink,
        }
    }
}

/// Bytes moved by one client in one round.
pub fn client_comm_cost(trace: &RoundTrace, client: &ClientTrace, bytes_per_scalar: u64) -> CommBytes {
    let iters = trace.local_iters as u64;
    let b = client.batch_size as u64;
    if trace.variant == ProtocolVariant::FedAvg {
        let w = trace.full_model_params as u64 * bytes_per_scalar;
        return CommBytes { uplink: w, downlink: w };
    }
    let activations = b * trace.cut_width as u64;
    let labels = b;
    let model = trace.client_model_params as u64;
    CommBytes {
        uplink: ((activations + labels) * iters + model) * bytes_per_scalar,
        downlink: (activations * iters + model) * bytes_per_scalar,
    }
}

/// Round totals over all participants.
pub fn comm_cost(trace: &RoundTrace, bytes_per_scalar: u64) -> CommBytes {
    trace
        .clients
        .iter()
        .map(|c| client_comm_cost(trace, c, bytes_per_scalar))
        .fold(CommBytes::default(), |a, b| a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(variant: ProtocolVariant, iters: usize) -> RoundTrace {
        RoundTrace {
            variant,
            local_iters: iters,
            cut_width: 16,
            client_model_params: 20 * 16 + 16,
            full_model_params: 20 * 16 + 16 + 16 * 10 + 10,
            clients: vec![
                ClientTrace {
                    client: 0,
                    batch_size: 30,
                },
                ClientTrace {
                    client: 3,
                    batch_size: 70,
                },
            ],
        }
    }

    #[test]
    fn zero_iterations_only_moves_the_model() {
        let t = trace(ProtocolVariant::Scala, 0);
        let c = client_comm_cost(&t, &t.clients[0], 4);
        assert_eq!(c.uplink, 336 * 4);
        assert_eq!(c.downlink, 336 * 4);
    }

    #[test]
    fn hand_computed_shapes() {
        let t = trace(ProtocolVariant::Scala, 5);
        // client 0: (30·16 + 30)·5 + 336 = 2886 scalars up, 30·16·5 + 336 = 2736 down
        // client 3: (70·16 + 70)·5 + 336 = 6286 up, 70·16·5 + 336 = 5936 down
        let total = comm_cost(&t, 4);
        assert_eq!(total.uplink, (2886 + 6286) * 4);
        assert_eq!(total.downlink, (2736 + 5936) * 4);
    }

    #[test]
    fn doubling_iterations_doubles_activation_term() {
        let a = comm_cost(&trace(ProtocolVariant::CaSfl, 5), 8);
        let b = comm_cost(&trace(ProtocolVariant::CaSfl, 10), 8);
        let model = 2 * 336 * 8;
        assert_eq!(b.uplink - model, 2 * (a.uplink - model));
        assert_eq!(b.downlink - model, 2 * (a.downlink - model));
    }

    #[test]
    fn fedavg_moves_full_model() {
        let t = trace(ProtocolVariant::FedAvg, 7);
        let c = comm_cost(&t, 4);
        assert_eq!(c.uplink, 2 * 506 * 4);
        assert_eq!(c.downlink, c.uplink);
    }
}
