use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use scala_sfl::config::parse_config;
use scala_sfl::experiment::{inspect_partition, run_experiment, run_theory_checks};
use scala_sfl::protocol::ProtocolVariant;
use scala_sfl::theory::{default_grid, SweepConfig};
use scala_sfl::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_THEORY: u8 = 3;

/// Split federated learning simulator. Set RUST_LOG for log output.
#[derive(Parser)]
#[command(name = "scala", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured variants and write metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this variant.
        #[arg(long)]
        variant: Option<ProtocolVariant>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the classifier-update closed forms and their crossover.
    TheoryCheck {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        /// Comma-separated P(y) values; `1/M` style fractions are accepted.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<String>>,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        /// Directory for theory_report.csv; printed to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Negative control: exchange the two losses. Expected to fail.
        #[arg(long)]
        swap_losses: bool,
    },
    /// Validate and summarise a partition manifest.
    Partition {
        #[arg(long)]
        inspect: PathBuf,
    },
}

fn parse_grid_value(s: &str) -> Result<f64, Error> {
    let s = s.trim();
    let value = match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (
                a.trim().parse().map_err(|_| bad_grid(s))?,
                b.trim().parse().map_err(|_| bad_grid(s))?,
            );
            a / b
        }
        None => s.parse().map_err(|_| bad_grid(s))?,
    };
    Ok(value)
}

fn bad_grid(s: &str) -> Error {
    Error::Config(format!("grid: cannot parse `{s}`"))
}

fn exit_for(err: &Error) -> ExitCode {
    error!("{err}");
    eprintln!("error: {err}");
    ExitCode::from(if err.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            variant,
            seed,
            out,
        } => {
            let mut cfg = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => return exit_for(&e),
            };
            if let Some(v) = variant {
                cfg.training.variants = vec![v];
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(dir) = out {
                cfg.output.dir = dir;
            }
            match run_experiment(&cfg) {
                Ok(manifest) => {
                    for o in &manifest.outputs {
                        println!("{}: {}", o.variant, o.metrics_csv.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => exit_for(&e),
            }
        }
        Command::TheoryCheck {
            classes,
            grid,
            eta,
            out,
            swap_losses,
        } => {
            let grid = match grid {
                Some(values) => match values
                    .iter()
                    .map(|s| parse_grid_value(s))
                    .collect::<Result<Vec<_>, _>>()
                {
                    Ok(g) => g,
                    Err(e) => return exit_for(&e),
                },
                None => default_grid(classes),
            };
            if classes < 2 {
                return exit_for(&Error::Config("classes must be >= 2".into()));
            }
            let sweep = SweepConfig {
                num_classes: classes,
                feature_dim: classes,
                eta,
                grid,
                swap_losses,
            };
            let outcome = match run_theory_checks(&sweep, out.as_deref()) {
                Ok(o) => o,
                Err(Error::InvalidArgument(msg)) => return exit_for(&Error::Config(msg)),
                Err(e) => return exit_for(&e),
            };
            match &outcome.csv_path {
                Some(p) => println!("report: {}", p.display()),
                None => print!("{}", outcome.report.to_csv()),
            }
            if outcome.passed() {
                println!("PASS: {} grid points", outcome.report.rows.len());
                ExitCode::SUCCESS
            } else {
                for f in &outcome.failures {
                    println!("FAIL: {f}");
                }
                ExitCode::from(EXIT_THEORY)
            }
        }
        Command::Partition { inspect } => match inspect_partition(&inspect) {
            Ok(summary) => {
                print!("{summary}");
                ExitCode::SUCCESS
            }
            Err(e) => exit_for(&e),
        },
    }
}
