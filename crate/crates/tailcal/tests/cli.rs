//! End-to-end checks of the command-line interface: exit codes, artifact
//! layout, reproducibility of outputs, and the self-baseline identity.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tailcal"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("tailcal_cli_tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn simulate_rejects_zero_n_with_exit_2() {
    let out = tmp("sim_zero");
    let status = bin()
        .args(["simulate", "--n", "0", "--out"])
        .arg(out.join("run"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&status.stderr);
    assert!(stderr.contains("--n"), "stderr: {stderr}");
}

#[test]
fn unknown_flag_exits_2() {
    let status = bin().args(["simulate", "--bogus-flag"]).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn simulate_outputs_are_byte_identical_across_reruns() {
    let root = tmp("sim_repro");
    for run in ["a", "b"] {
        let status = bin()
            .args([
                "simulate",
                "--n",
                "5000",
                "--seed",
                "3",
                "--gamma-grid",
                "log:0.1:100:4",
            ])
            .arg("--out")
            .arg(root.join(run))
            .status()
            .unwrap();
        assert!(status.success());
    }
    for file in ["summary.json", "sweep.csv", "config.json", "curves/mle_pit.csv"] {
        assert_eq!(
            read(&root.join("a").join(file)),
            read(&root.join("b").join(file)),
            "{file} differs between reruns"
        );
    }
}

#[test]
fn simulate_summary_contains_expected_fields() {
    let out = tmp("sim_fields");
    let status = bin()
        .args(["simulate", "--n", "4000", "--seed", "1", "--gamma-grid", "1,10"])
        .arg("--out")
        .arg(out.join("run"))
        .status()
        .unwrap();
    assert!(status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&read(&out.join("run/summary.json"))).unwrap();
    assert!(summary["a_hat"].as_f64().unwrap() > 0.0);
    assert!(summary["log_score_f1"].as_f64().is_some());
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&out.join("run/manifest.json"))).unwrap();
    assert!(manifest["artifacts"].as_array().unwrap().len() >= 4);
}

#[test]
fn gen_data_cluster_train_evaluate_pipeline() {
    let root = tmp("pipeline");
    // Generate a small tail-misspecified dataset.
    let status = bin()
        .args([
            "gen-data",
            "--stations",
            "4",
            "--train-days",
            "120",
            "--test-days",
            "60",
            "--seed",
            "2",
            "--tail-misspec",
        ])
        .arg("--out")
        .arg(root.join("data"))
        .status()
        .unwrap();
    assert!(status.success());
    let train = root.join("data/train.csv");
    let test = root.join("data/test.csv");
    assert!(train.exists() && test.exists() && root.join("data/truth.json").exists());

    // Regenerating with the same seed is byte-identical.
    let status = bin()
        .args([
            "gen-data",
            "--stations",
            "4",
            "--train-days",
            "120",
            "--test-days",
            "60",
            "--seed",
            "2",
            "--tail-misspec",
        ])
        .arg("--out")
        .arg(root.join("data2"))
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(read(&train), read(&root.join("data2/train.csv")));

    // Cluster the stations.
    let status = bin()
        .args(["cluster", "--k", "2", "--kq", "5", "--seed", "0"])
        .arg("--data")
        .arg(&train)
        .arg("--out")
        .arg(root.join("clusters"))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(root.join("clusters/clustering.json").exists());
    assert!(root.join("clusters/elbow.csv").exists());

    // Train an EMOS model under the baseline loss.
    let status = bin()
        .args(["train", "--model", "emos", "--k", "2", "--seed", "0"])
        .arg("--data")
        .arg(&train)
        .arg("--out")
        .arg(root.join("emos"))
        .status()
        .unwrap();
    assert!(status.success());
    let emos_model = root.join("emos/models/emos.json");
    assert!(emos_model.exists());

    // Evaluate it, then evaluate again against itself as baseline: the
    // skill columns must be exactly zero.
    let status = bin()
        .args(["evaluate", "--model", "emos"])
        .arg("--models")
        .arg(&emos_model)
        .arg("--data")
        .arg(&test)
        .arg("--out")
        .arg(root.join("eval1"))
        .status()
        .unwrap();
    assert!(status.success());
    let metrics1 = root.join("eval1/metrics.csv");
    let status = bin()
        .args(["evaluate", "--model", "emos"])
        .arg("--models")
        .arg(&emos_model)
        .arg("--data")
        .arg(&test)
        .arg("--baseline")
        .arg(&metrics1)
        .arg("--out")
        .arg(root.join("eval2"))
        .status()
        .unwrap();
    assert!(status.success());
    let body = read(&root.join("eval2/metrics.csv"));
    let data_line = body.lines().nth(1).unwrap();
    let fields: Vec<&str> = data_line.split(',').collect();
    // last five columns are the skill percentages
    for s in &fields[fields.len() - 5..] {
        let v: f64 = s.parse().unwrap();
        assert_eq!(v, 0.0, "self-baseline skill must be zero, line: {data_line}");
    }

    // Diagnose the ideal forecaster: its tail-ratio curve hugs the diagonal.
    let status = bin()
        .args(["diagnose", "--model", "ideal", "--threshold", "9.0"])
        .arg("--truth")
        .arg(root.join("data/truth.json"))
        .arg("--data")
        .arg(&test)
        .arg("--out")
        .arg(root.join("diag"))
        .status()
        .unwrap();
    assert!(status.success());
    let curve = read(&root.join("diag/curves/ideal_rhat.csv"));
    let mut max_dev: f64 = 0.0;
    for line in curve.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (u, v): (f64, f64) = (f[0].parse().unwrap(), f[1].parse().unwrap());
        max_dev = max_dev.max((u - v).abs());
    }
    assert!(max_dev < 0.25, "ideal rhat curve deviates {max_dev}");

    // Evaluate is idempotent: rerunning produces identical bytes.
    let status = bin()
        .args(["evaluate", "--model", "emos"])
        .arg("--models")
        .arg(&emos_model)
        .arg("--data")
        .arg(&test)
        .arg("--out")
        .arg(root.join("eval3"))
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(read(&metrics1), read(&root.join("eval3/metrics.csv")));
}

#[test]
fn train_finetune_network_roundtrip() {
    let root = tmp("net_pipeline");
    let status = bin()
        .args([
            "gen-data",
            "--stations",
            "3",
            "--train-days",
            "80",
            "--test-days",
            "40",
            "--seed",
            "4",
            "--tail-misspec",
        ])
        .arg("--out")
        .arg(root.join("data"))
        .status()
        .unwrap();
    assert!(status.success());
    let train = root.join("data/train.csv");
    let test = root.join("data/test.csv");

    // Two tiny DRN replicates.
    let status = bin()
        .args([
            "train", "--model", "drn", "--replicates", "2", "--seed", "5", "--epochs", "8",
            "--batch-size", "128",
        ])
        .arg("--data")
        .arg(&train)
        .arg("--out")
        .arg(root.join("drn"))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(root.join("drn/models/drn_r000.json").exists());
    assert!(root.join("drn/models/drn_r001.json").exists());

    // Finetune them under the tail penalty.
    let status = bin()
        .args([
            "finetune", "--model", "drn", "--penalty", "tmcb", "--gamma", "5",
            "--threshold", "10.0", "--steps", "10",
        ])
        .arg("--models")
        .arg(root.join("drn/models"))
        .arg("--data")
        .arg(&train)
        .arg("--out")
        .arg(root.join("drn_tuned"))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(root.join("drn_tuned/models/drn_r000_tmcb_g5.json").exists());

    // Evaluate the directory of tuned models.
    let status = bin()
        .args(["evaluate", "--model", "drn", "--threshold", "10.0"])
        .arg("--models")
        .arg(root.join("drn_tuned/models"))
        .arg("--data")
        .arg(&test)
        .arg("--out")
        .arg(root.join("drn_eval"))
        .status()
        .unwrap();
    assert!(status.success());
    let body = read(&root.join("drn_eval/metrics.csv"));
    assert!(body.lines().count() >= 4, "two models plus mean row:\n{body}");
    assert!(body.contains("tmcb"));
}
