use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn barcode(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_barcode"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two disjoint species groups, each abundant in half of the samples.
fn rank_two_counts(dir: &Path) -> PathBuf {
    let (n, p) = (60, 12);
    let mut body = String::from("sample_id,site_id");
    for j in 0..p {
        body.push_str(&format!(",sp{j}"));
    }
    body.push('\n');
    for i in 0..n {
        body.push_str(&format!("s{i},site{}", i % 4));
        for j in 0..p {
            let group_on = (i % 2 == 0) == (j < p / 2);
            let y = if group_on { 6 + (i * 7 + j * 3) % 5 } else { 0 };
            body.push_str(&format!(",{y}"));
        }
        body.push('\n');
    }
    let path = dir.join("counts.csv");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = barcode(&["frobnicate"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let counts = rank_two_counts(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 3\n[hypers]\nfactorz = 4\n").unwrap();
    let out = barcode(&["fit", "--config", path_str(&cfg), "--counts", path_str(&counts)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("factorz"));
}

#[test]
fn invalid_hyperparameter_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let counts = rank_two_counts(dir.path());
    let out = barcode(&["fit", "--counts", path_str(&counts), "--factors", "0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn malformed_counts_are_a_data_error() {
    let dir = TempDir::new().unwrap();
    let counts = dir.path().join("bad.csv");
    fs::write(&counts, "sample_id,site_id,a\ns1,A,1\ns2,A,-3\n").unwrap();
    let out = barcode(&["fit", "--counts", path_str(&counts), "--out", path_str(&dir.path().join("o"))]);
    assert_eq!(code(&out), 3);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 3") && err.contains("negative count"), "{err}");
}

#[test]
fn missing_archive_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let out = barcode(&["cluster", path_str(&dir.path().join("nothing"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn fit_then_analyse_a_rank_two_data_set() {
    let dir = TempDir::new().unwrap();
    let counts = rank_two_counts(dir.path());
    let archive = dir.path().join("fit");
    let out = barcode(&[
        "fit", "--counts", path_str(&counts), "--out", path_str(&archive), "--factors", "3", "--chains", "2",
        "--burnin", "400", "--samples", "400", "--thin", "4", "--seed", "5",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["manifest.json", "labels.json", "run_config.json"] {
        assert!(archive.join(f).exists(), "{f}");
    }

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(archive.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["hypers"]["a_gamma"], 0.5);
    assert_eq!(manifest["hypers"]["psi_a"], 10.0);
    assert_eq!(manifest["hypers"]["tau0"], 1.0);
    assert_eq!(manifest["seed"], 5);

    let out = barcode(&["cluster", path_str(&archive)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let clusters = fs::read_to_string(archive.join("clusters.csv")).unwrap();
    let occupied = clusters.lines().skip(1).count();
    assert!((1..=3).contains(&occupied), "{clusters}");
    // species of one group never split across a cluster boundary of the other
    let table = fs::read_to_string(archive.join("species_barcodes.csv")).unwrap();
    let label: Vec<String> = table.lines().skip(1).map(|r| r.rsplit(',').next().unwrap().to_string()).collect();
    assert_eq!(label.len(), 12);
    assert!(archive.join("regions.csv").exists());

    let out = barcode(&["diagnose", path_str(&archive)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let psrf = fs::read_to_string(archive.join("psrf.csv")).unwrap();
    assert!(psrf.lines().next().unwrap().starts_with("group,"));
    assert!(psrf.contains("loglik"));

    let out = barcode(&["summarize", path_str(&archive), "--counts", path_str(&counts)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let presence = fs::read_to_string(archive.join("factor_presence.csv")).unwrap();
    let first: Vec<&str> = presence.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first, vec!["0", "100.00"]);
    assert!(archive.join("variance_explained.csv").exists());
}

#[test]
fn diagnose_needs_two_chains() {
    let dir = TempDir::new().unwrap();
    let counts = rank_two_counts(dir.path());
    let archive = dir.path().join("one");
    let out = barcode(&[
        "fit", "--counts", path_str(&counts), "--out", path_str(&archive), "--factors", "2", "--chains", "1",
        "--burnin", "20", "--samples", "20", "--thin", "1",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&barcode(&["diagnose", path_str(&archive)])), 2);
}

#[test]
fn simulate_writes_a_single_data_set_that_fit_accepts() {
    let dir = TempDir::new().unwrap();
    let sim = dir.path().join("sim");
    let out = barcode(&[
        "simulate", "--n", "40", "--p", "8", "--with-covariates", "--factors", "3", "--seed", "2", "--out",
        path_str(&sim),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["counts.csv", "covariates.csv", "truth_S.csv", "truth_C.csv", "truth_Gamma.csv", "truth_B.csv"] {
        assert!(sim.join(f).exists(), "{f}");
    }
    let counts = fs::read_to_string(sim.join("counts.csv")).unwrap();
    assert_eq!(counts.lines().count(), 41);
    let truth_s = fs::read_to_string(sim.join("truth_S.csv")).unwrap();
    assert_eq!(truth_s.lines().count(), 9);

    let out = barcode(&[
        "fit", "--counts", path_str(&sim.join("counts.csv")), "--covariates", path_str(&sim.join("covariates.csv")),
        "--factors", "3", "--chains", "1", "--burnin", "10", "--samples", "10", "--thin", "1", "--out",
        path_str(&dir.path().join("fit")),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn predict_cv_reports_every_fold() {
    let dir = TempDir::new().unwrap();
    let counts = rank_two_counts(dir.path());
    let out_dir = dir.path().join("cv");
    let out = barcode(&[
        "predict-cv", "--counts", path_str(&counts), "--folds", "3", "--factors", "3", "--chains", "1",
        "--burnin", "50", "--samples", "50", "--thin", "5", "--out", path_str(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let cv = fs::read_to_string(out_dir.join("cv.csv")).unwrap();
    assert_eq!(cv.lines().count(), 4);
}
