//! Per-sample classifier update for class y under plain and logit-adjusted
//! CE as P(y) sweeps from rare to dominant.
//!
//! Usage: cargo run --example theory_crossover [num_classes]

use scala_sfl::theory::{default_grid, theorem2_sweep};

fn main() -> scala_sfl::Result<()> {
    let m: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let report = theorem2_sweep(m, m, 1.0, &default_grid(m))?;
    println!("{:>8} {:>12} {:>12}  ordering", "P(y)", "plain", "adjusted");
    for r in &report.rows {
        println!(
            "{:>8.4} {:>12.6} {:>12.6}  {}",
            r.p_y,
            r.plain_analytic,
            r.adj_analytic,
            r.ordering.as_str()
        );
    }
    let failures = report.failures();
    if failures.is_empty() {
        println!("closed forms agree with backprop; crossover at P(y) = 1/{m}");
    } else {
        for f in failures {
            println!("FAIL {f}");
        }
    }
    Ok(())
}
