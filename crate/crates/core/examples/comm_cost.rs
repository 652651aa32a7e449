//! Bytes per round for each variant, and how they scale with local
//! iterations.

use scala_sfl::protocol::{comm_cost, ClientTrace, ProtocolVariant, RoundTrace};

fn main() {
    let clients: Vec<ClientTrace> = [32, 32, 64, 192]
        .iter()
        .enumerate()
        .map(|(client, &batch_size)| ClientTrace { client, batch_size })
        .collect();
    println!("{:>12} {:>6} {:>12} {:>12}", "variant", "I", "uplink", "downlink");
    for variant in ProtocolVariant::ALL {
        for local_iters in [1, 10, 20] {
            let trace = RoundTrace {
                variant,
                local_iters,
                cut_width: 64,
                client_model_params: 20 * 64 + 64,
                full_model_params: 20 * 64 + 64 + 64 * 64 + 64 + 64 * 10 + 10,
                clients: clients.clone(),
            };
            let bytes = comm_cost(&trace, 4);
            println!(
                "{:>12} {local_iters:>6} {:>12} {:>12}",
                variant.name(),
                bytes.uplink,
                bytes.downlink
            );
        }
    }
}
