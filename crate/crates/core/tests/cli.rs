use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn scala(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scala"))
        .args(args)
        .output()
        .expect("spawn scala")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const SMALL: &str = r#"
seed = 5
[dataset]
num_classes = 4
feature_dim = 6
train_per_class = 20
test_per_class = 10
[federation]
clients = 6
participation = 0.5
alpha = 2
[model]
hidden = [8]
cut_index = 1
[training]
variants = ["scala", "fedavg"]
rounds = 3
batch_size = 12
local_iters = 2
learning_rate = 0.05
eval_every = 1
"#;

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_outputs_and_partition_inspects() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out_dir = dir.path().join("out");
    let out = scala(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "scala_metrics.csv",
        "fedavg_metrics.csv",
        "scala_metrics.ndjson",
        "partition.json",
        "manifest.json",
    ] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let csv = fs::read_to_string(out_dir.join("scala_metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let inspect = scala(&[
        "partition",
        "--inspect",
        out_dir.join("partition.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&inspect), 0);
    assert!(!inspect.stdout.is_empty());
}

#[test]
fn variant_and_seed_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out_dir = dir.path().join("out");
    let out = scala(&[
        "run",
        "--config",
        &cfg,
        "--variant",
        "ca-sfl",
        "--seed",
        "9",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(out_dir.join("ca-sfl_metrics.csv").exists());
    assert!(!out_dir.join("scala_metrics.csv").exists());
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[federation]\nparticipation = 0.0\n");
    let out = scala(&["run", "--config", &bad]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("federation.participation"));

    let unknown = write(dir.path(), "unknown.toml", "[training]\nepochs = 3\n");
    assert_eq!(code(&scala(&["run", "--config", &unknown])), 1);
    assert_eq!(code(&scala(&["run", "--config", "/nonexistent/config.toml"])), 1);
    assert_eq!(code(&scala(&["theory-check", "--grid", "0.5,abc"])), 1);
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let junk = write(dir.path(), "p.json", "{\"not\": \"a manifest\"}");
    assert_eq!(code(&scala(&["partition", "--inspect", &junk])), 2);
}

#[test]
fn theory_check_passes_and_negative_control_exits_3() {
    let ok = scala(&["theory-check", "--classes", "10"]);
    assert_eq!(code(&ok), 0);
    let text = String::from_utf8_lossy(&ok.stdout);
    assert!(text.starts_with("P_y,plain_analytic,plain_empirical,adj_analytic,adj_empirical,ordering_flag"));
    assert!(text.contains("PASS"));

    let grid = scala(&["theory-check", "--classes", "4", "--grid", "0.01,1/4,0.9"]);
    assert_eq!(code(&grid), 0);

    let swapped = scala(&["theory-check", "--swap-losses"]);
    assert_eq!(code(&swapped), 3);
    assert!(String::from_utf8_lossy(&swapped.stdout).contains("FAIL"));
}

#[test]
fn theory_check_writes_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = scala(&["theory-check", "--classes", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let csv = fs::read_to_string(dir.path().join("theory_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);

    // 1/10 coincides with 0.1 and is listed once
    let ten = scala(&["theory-check", "--classes", "10"]);
    let rows = String::from_utf8_lossy(&ten.stdout)
        .lines()
        .filter(|l| l.starts_with("0."))
        .count();
    assert_eq!(rows, 7);
}
