//! End-to-end tests driving the `efl` binary.

use std::path::Path;
use std::process::{Command, Output};

fn efl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_efl"))
        .args(args)
        .output()
        .expect("failed to launch efl")
}

fn write_config(dir: &Path, output_dir: &Path, seeds: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    let text = format!(
        r#"
[dataset]
kind = "synthetic-classification"
alpha = 1.0
beta = 0.5
clients = 5
samples_per_client = [30, 40]
input_dim = 8
classes = 3
split_ratio = 0.8

[model]
kind = "softmax-regression"
input_dim = 8
classes = 3
l2 = 0.0

[hyper]
rounds = 6
local_steps = 3
batch_size = 8
lambda = 0.01
lr = {{ schedule = "constant", eta0 = 0.1 }}
q_up = 0.1
q_down = 0.1
algorithm = {{ kind = "efl" }}
aggregation = "adaptive"

[run]
seeds = {seeds}
output_dir = "{}"
"#,
        output_dir.display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn validate_accepts_good_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("out"), "[1]");
    let out = efl(&["validate", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok:"));
}

#[test]
fn validate_rejects_negative_lambda_naming_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("out"), "[1]");
    let out = efl(&["validate", cfg.to_str().unwrap(), "--set", "hyper.lambda=-1"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("hyper.lambda"), "{err}");
}

#[test]
fn unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("out"), "[1]");
    let out = efl(&["validate", cfg.to_str().unwrap(), "--set", "hyper.bogus_knob=3"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus_knob") || err.contains("unknown field"), "{err}");
}

#[test]
fn run_is_deterministic_and_fans_out_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let cfg = write_config(tmp.path(), &out_a, "[1, 2, 3]");

    let run = efl(&["run", cfg.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    // Exactly 3 metrics files plus manifest and config echo.
    for seed in [1, 2, 3] {
        assert!(out_a.join(format!("metrics_seed{seed}.csv")).exists());
    }
    assert!(out_a.join("manifest.toml").exists());
    assert!(out_a.join("config.toml").exists());

    let run = efl(&[
        "run",
        cfg.to_str().unwrap(),
        "--set",
        &format!("run.output_dir={}", out_b.display()),
    ]);
    assert!(run.status.success());
    for seed in [1, 2, 3] {
        let a = std::fs::read(out_a.join(format!("metrics_seed{seed}.csv"))).unwrap();
        let b = std::fs::read(out_b.join(format!("metrics_seed{seed}.csv"))).unwrap();
        assert_eq!(a, b, "metrics differ for seed {seed}");
    }
}

#[test]
fn overrides_are_reflected_in_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &out, "[1]");
    let run = efl(&["run", cfg.to_str().unwrap(), "--set", "hyper.lambda=0.125"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let manifest = std::fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("lambda = 0.125"), "{manifest}");
    assert!(manifest.contains("commit = "));
}

#[test]
fn sequential_flag_matches_parallel_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out_p = tmp.path().join("par");
    let out_s = tmp.path().join("seq");
    let cfg = write_config(tmp.path(), &out_p, "[7]");
    assert!(efl(&["run", cfg.to_str().unwrap()]).status.success());
    assert!(efl(&[
        "run",
        cfg.to_str().unwrap(),
        "--sequential",
        "--set",
        &format!("run.output_dir={}", out_s.display()),
    ])
    .status
    .success());
    let a = std::fs::read(out_p.join("metrics_seed7.csv")).unwrap();
    let b = std::fs::read(out_s.join("metrics_seed7.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn report_matches_bruteforce_recompute_and_json_agrees() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &out, "[1, 2]");
    assert!(efl(&["run", cfg.to_str().unwrap()]).status.success());

    // Brute-force BMTA from the raw CSV of seed 1: max over the
    // test_acc_mean column.
    let csv = std::fs::read_to_string(out.join("metrics_seed1.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "test_acc_mean").unwrap();
    let bmta_brute = lines
        .map(|l| l.split(',').nth(col).unwrap().parse::<f64>().unwrap())
        .fold(f64::NAN, f64::max);

    let json_out = efl(&["report", out.to_str().unwrap(), "--json"]);
    assert!(json_out.status.success());
    let parsed: serde_json::Value = serde_json::from_slice(&json_out.stdout).unwrap();
    let bmta_json = parsed["seeds"][0]["bmta"].as_f64().unwrap();
    assert!((bmta_json - bmta_brute).abs() < 1e-15);

    // The table view shows the same aggregate numbers.
    let table_out = efl(&["report", out.to_str().unwrap()]);
    assert!(table_out.status.success());
    let table = String::from_utf8_lossy(&table_out.stdout);
    let mean = parsed["bmta_mean"].as_f64().unwrap();
    assert!(table.contains(&format!("{mean:.4}")), "{table}");
}

#[test]
fn report_on_empty_dir_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = efl(&["report", tmp.path().to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn m_exceeding_classes_fails_before_data_access() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    std::fs::write(
        &path,
        r#"
[dataset]
kind = "idx"
train_images = "train-images.idx"
train_labels = "train-labels.idx"
clients = 10
partition = { scheme = "by-classes", m = 12 }
classes = 10

[model]
kind = "softmax-regression"
input_dim = 784
classes = 10

[hyper]
rounds = 1
local_steps = 1
batch_size = 8
lr = { schedule = "constant", eta0 = 0.1 }
algorithm = { kind = "fedavg" }

[run]
seeds = [1]
output_dir = "out"
"#,
    )
    .unwrap();
    let out = efl(&["validate", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dataset.partition.m"), "{err}");
}
