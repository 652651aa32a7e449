//! Load a TOML config, run every listed variant and print the final round.
//!
//! Usage: cargo run --release --example run_from_config [config.toml]

use scala_sfl::config::parse_config;
use scala_sfl::experiment::run_experiment;
use scala_sfl::protocol::RoundMetrics;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/quick.toml").to_string());
    let mut cfg = parse_config(path.as_ref())?;
    cfg.output.dir = std::env::temp_dir().join("scala_run_from_config");
    let manifest = run_experiment(&cfg)?;
    for out in &manifest.outputs {
        let text = std::fs::read_to_string(&out.metrics_ndjson)?;
        let last: RoundMetrics = serde_json::from_str(text.lines().last().expect("at least one round"))?;
        let eval = last.eval.expect("last round is evaluated");
        println!(
            "{:>12}: round {}, acc {:.4}, balanced acc {:.4}, {} B up per round",
            out.variant, last.t, eval.acc, eval.bal_acc, last.up_bytes
        );
    }
    println!("outputs in {}", cfg.output.dir.display());
    Ok(())
}
