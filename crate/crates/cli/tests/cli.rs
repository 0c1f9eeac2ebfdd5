//! Exit-code and artifact checks for the command-line driver.

use std::process::Command;

fn csbss() -> Command {
    Command::new(env!("CARGO_BIN_EXE_csbss"))
}

#[test]
fn rejects_unknown_config_key_with_code_2() {
    let out = csbss()
        .args(["train", "--set", "nonsense=1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nonsense"), "stderr: {stderr}");
}

#[test]
fn rejects_out_of_range_rate_with_code_2() {
    let out = csbss()
        .args(["train", "--dataset", "synthetic", "--sensing-rate", "1.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fetch_check_reports_missing_files_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = csbss()
        .args(["fetch-check", "--data-dir"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("MISSING"), "stdout: {stdout}");
}

#[test]
fn verify_theorems_passes_on_small_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("sweep.csv");
    let out = csbss()
        .args([
            "verify-theorems",
            "--signals",
            "12",
            "--dim",
            "32",
            "--mixtures",
            "30",
            "--seeds",
            "2",
            "--out",
        ])
        .arg(&csv)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "stdout: {stdout}");
    assert!(stdout.contains("0 violations"), "stdout: {stdout}");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.lines().count() > 1, "csv should hold data rows");
}

#[test]
fn train_then_evaluate_round_trips_on_synthetic_data() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    let out = csbss()
        .args([
            "train",
            "--dataset",
            "synthetic",
            "--epochs",
            "1",
            "--sensing-rate",
            "0.5",
            "--set",
            "train_mixtures=120",
            "--set",
            "val_mixtures=40",
            "--set",
            "test_mixtures=60",
            "--set",
            "parameter_budget=12000",
            "--set",
            "latent_dim=8",
            "--output-dir",
        ])
        .arg(&run_dir)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("accuracy"), "stdout: {stdout}");
    for artifact in [
        "report.json",
        "separator.csnn",
        "classifier.csnn",
        "separator_log.csv",
        "classifier_log.csv",
        "phi.cspm",
    ] {
        assert!(run_dir.join(artifact).exists(), "missing {artifact}");
    }

    let eval = csbss()
        .args(["evaluate", "--run-dir"])
        .arg(&run_dir)
        .output()
        .unwrap();
    assert_eq!(eval.status.code(), Some(0));
    let eval_out = String::from_utf8_lossy(&eval.stdout);
    // Re-evaluation from checkpoints reproduces the training-time figure.
    let trained: f64 = stdout
        .split_whitespace()
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    let evaluated: f64 = eval_out.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((trained - evaluated).abs() < 1e-12);
}

#[test]
fn rip_audit_prints_distortion() {
    let out = csbss()
        .args([
            "rip-audit",
            "--dim",
            "128",
            "--rate",
            "0.5",
            "--sparsity",
            "1",
            "--trials",
            "50",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max_distortion"), "stdout: {stdout}");
}

#[test]
fn tables_lists_expected_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = csbss()
        .args(["tables", "--runs-root"])
        .arg(tmp.path())
        .args(["--dataset", "mnist", "--scale", "0.4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("No compression"), "stdout: {stdout}");
    assert!(stdout.contains("0 of 5 runs present"), "stdout: {stdout}");
}
