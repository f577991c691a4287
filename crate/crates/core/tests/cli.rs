use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cura(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cura"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cura(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--n", "1500", "--rate", "0.1", "--heads", "2", "--epochs", "6", "--warmup", "1", "--lr", "0.001",
    "--k", "20",
];

fn train(out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--out", p(out), "--seed", "3"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(&args);
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_default_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let stdout = ok(&["synth", "--out", p(&a)]);
    assert!(stdout.contains("n=10000"));
    ok(&["synth", "--out", p(&b)]);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 10_001);
    assert_eq!(text, fs::read_to_string(&b).unwrap());

    let c = dir.path().join("c.csv");
    ok(&["synth", "--out", p(&c), "--rate", "0.03", "--seed", "11"]);
    let ds = cura::dataset::load_csv(&c).unwrap();
    assert!((0.0225..=0.0375).contains(&ds.positive_rate()));
}

#[test]
fn train_writes_one_model_and_log_per_fold() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("base");
    train(&out, &["--method", "internal_baseline", "--folds", "5"]);
    for f in 0..5 {
        assert!(out.join(format!("models/internal_baseline_fold{f}.json")).is_file());
        assert!(out.join(format!("logs/internal_baseline_fold{f}.csv")).is_file());
    }
    assert_eq!(fs::read_dir(out.join("models")).unwrap().count(), 5);
    assert_eq!(fs::read_dir(out.join("logs")).unwrap().count(), 5);

    // The restored epoch has the lowest validation NLL in the log.
    let model = read_json(&out.join("models/internal_baseline_fold0.json"));
    let best = model["body"]["members"][0]["best_epoch"].as_u64().unwrap() as usize;
    let log = fs::read_to_string(out.join("logs/internal_baseline_fold0.csv")).unwrap();
    let nll: Vec<f64> = log
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    let min = nll.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(nll[best - 1], min);
}

#[test]
fn cura_writes_cohort_stats_and_zero_weights_match_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("cura");
    train(&full, &["--method", "cura", "--folds", "2"]);
    let cohorts = fs::read_to_string(full.join("logs/cura_fold0_cohorts.csv")).unwrap();
    assert!(cohorts.starts_with("id,q,cohort_entropy,weight\n"));

    let base = dir.path().join("base");
    let off = dir.path().join("off");
    train(&base, &["--method", "internal_baseline", "--folds", "2"]);
    train(&off, &["--method", "cura", "--lambda-ind", "0", "--lambda-coh", "0", "--folds", "2"]);
    ok(&["eval", "--run", p(&base), "--run", p(&off)]);
    for f in 0..2 {
        let a = read_json(&base.join(format!("reports/internal_baseline_fold{f}.json")));
        let b = read_json(&off.join(format!("reports/cura_fold{f}.json")));
        for key in ["auroc", "auprc", "brier", "nll", "aurc", "frr"] {
            assert_eq!(a["body"][key], b["body"][key], "{key}");
        }
    }
}

#[test]
fn eval_and_triage_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    train(&out, &["--method", "internal_baseline", "--folds", "3"]);
    let table = ok(&["eval", "--run", p(&out)]);
    assert!(table.contains("internal_baseline"));

    let summary = read_json(&out.join("reports/internal_baseline_summary.json"));
    let mut sum = 0.0;
    for f in 0..3 {
        let r = read_json(&out.join(format!("reports/internal_baseline_fold{f}.json")));
        for key in ["auroc", "auprc", "brier", "nll", "aurc"] {
            assert!(r["body"][key].is_f64(), "{key}");
        }
        sum += r["body"]["brier"].as_f64().unwrap();
        for curve in ["risk_coverage", "bins", "workload_safety", "retained_auprc", "frr"] {
            assert!(out.join(format!("curves/internal_baseline/fold{f}/{curve}.csv")).is_file());
        }
    }
    let mean = summary["body"]["brier"]["mean"].as_f64().unwrap();
    assert!((mean - sum / 3.0).abs() < 1e-15);

    ok(&["triage", "--run", p(&out)]);
    let pooled = out.join("curves/internal_baseline/pooled");
    let frr = fs::read_to_string(pooled.join("frr.csv")).unwrap();
    let taus: Vec<&str> = frr.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(taus, ["0.05", "0.1", "0.15"]);
    let bins = fs::read_to_string(pooled.join("bins.csv")).unwrap();
    let total: usize = bins
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 1500);
}

#[test]
fn grid_rows_and_zero_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid");
    let mut args = vec!["grid", "--out", p(&out), "--folds", "2", "--lambda-ind-values", "0", "--lambda-coh-values", "0"];
    args.extend_from_slice(SMALL);
    ok(&args);
    let text = fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("method,lambda_ind,lambda_coh,fold,auroc,auprc,brier,nll,aurc,status")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // Four ablation rows plus the (0, 0) cell, per fold.
    assert_eq!(rows.len(), 5 * 2);
    assert!(rows.iter().all(|r| r[9] == "ok"));
    for f in ["0", "1"] {
        let base = rows.iter().find(|r| r[0] == "internal_baseline" && r[3] == f).unwrap();
        let zero = rows
            .iter()
            .find(|r| r[0] == "cura" && r[1] == "0" && r[2] == "0" && r[3] == f)
            .unwrap();
        assert_eq!(base[4..9], zero[4..9]);
    }
}

#[test]
fn gradcheck_passes_and_errors_exit_nonzero() {
    let stdout = ok(&["gradcheck", "--heads", "3", "--n", "200", "--tuples", "2000"]);
    assert!(stdout.contains("PASS"));
    ok(&["gradcheck", "--heads", "3", "--n", "200", "--lambda-ind", "0", "--lambda-coh", "0"]);

    let bad = cura(&["train", "--heads", "0"]);
    assert_eq!(bad.status.code(), Some(cura::cli::EXIT_ERROR));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("error:"));
    let missing = cura(&["train", "--config", "/nonexistent/run.json"]);
    assert_eq!(missing.status.code(), Some(cura::cli::EXIT_ERROR));
}
