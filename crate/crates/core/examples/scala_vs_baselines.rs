//! SCALA against CA-SFL and SplitFedV1 under quantity skew (α = 2).
//!
//! Usage: cargo run --release --example scala_vs_baselines [separation] [hidden]

#![allow(clippy::field_reassign_with_default)]

use scala_sfl::config::TrainingConfig;
use scala_sfl::experiment::{prepare, run_variant};
use scala_sfl::protocol::ProtocolVariant;

fn main() -> scala_sfl::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let separation: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1.5);
    let hidden: Vec<usize> = args
        .get(2)
        .map(|s| s.split(',').filter_map(|w| w.parse().ok()).collect())
        .unwrap_or_else(|| vec![128, 64]);

    let variants = [
        ProtocolVariant::Scala,
        ProtocolVariant::CaSfl,
        ProtocolVariant::SplitFedV1,
    ];
    let mut totals = [0.0; 3];
    let seeds = [1u64, 2, 3];
    for &seed in &seeds {
        let mut cfg = TrainingConfig::default();
        cfg.seed = seed;
        cfg.dataset.num_classes = 10;
        cfg.dataset.feature_dim = 20;
        cfg.dataset.class_separation = separation;
        cfg.dataset.train_per_class = 200;
        cfg.dataset.test_per_class = 500;
        cfg.federation.clients = 20;
        cfg.federation.participation = 0.2;
        cfg.federation.alpha = 2;
        cfg.model.hidden = hidden.clone();
        cfg.model.cut_index = 1;
        cfg.training.rounds = 200;
        cfg.training.local_iters = 10;
        cfg.training.batch_size = 100;
        cfg.training.learning_rate = 0.05;
        cfg.training.eval_every = 200;
        let prepared = prepare(&cfg)?;
        for (i, &v) in variants.iter().enumerate() {
            let rows = run_variant(&cfg, &prepared, v)?;
            let eval = rows
                .last()
                .and_then(|r| r.eval.as_ref())
                .expect("final round is evaluated");
            println!("seed {seed} {v:>12}: acc {:.4} bal_acc {:.4}", eval.acc, eval.bal_acc);
            totals[i] += eval.bal_acc;
        }
    }
    for (v, t) in variants.iter().zip(totals) {
        println!("{v:>12}: mean balanced accuracy {:.2}%", 100.0 * t / seeds.len() as f64);
    }
    Ok(())
}
