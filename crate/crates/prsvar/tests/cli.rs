//! End-to-end checks of the command-line surface: report contents, sweep
//! tables, manifests, and flag/environment overrides.

use std::path::{Path, PathBuf};
use std::process::Output;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_prsvar")
}

fn run(args: &[&str]) -> Output {
    std::process::Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_env(args: &[&str], key: &str, value: &str) -> Output {
    std::process::Command::new(bin())
        .args(args)
        .env(key, value)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, value: serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path
}

fn base_config() -> serde_json::Value {
    serde_json::json!({
        "covariance": {"kind": {"type": "identity"}, "p": 60, "mask": {"type": "first_m", "m": 30}},
        "population": {"n": 60, "n_z": 40, "n_w": 50, "h2_beta": 0.5, "h2_beta_z": 0.5},
        "simulation": {
            "entry_dist": {"type": "gaussian"},
            "effect_dist": "gaussian",
            "replications": 40,
            "master_seed": 11,
            "estimator": {"type": "marginal"},
            "target": {"type": "accuracy"}
        }
    })
}

#[test]
fn analytic_reports_cor32_value() {
    let dir = tempfile::tempdir().unwrap();
    // h² = 0.5 and p = n give the closed-form center √0.5·(2+1)^{-1/2}.
    let cfg = write_config(dir.path(), "c.json", base_config());
    let out = run(&["analytic", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let entry = &report["entries"][0];
    assert_eq!(entry["estimator"], "marginal");
    assert_eq!(entry["level"], "accuracy");
    let center = entry["center"].as_f64().unwrap();
    assert!((center - 0.40825).abs() < 1e-4, "center {center}");
    assert!(entry["eta"].as_f64().unwrap() > 0.0);
}

#[test]
fn analytic_degenerate_config_still_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base_config();
    v["population"]["h2_beta"] = serde_json::json!(0.0);
    // h² = 0 is a degenerate law but a valid analytic request.
    let cfg = write_config(dir.path(), "c.json", v);
    let out = run(&["analytic", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["entries"][0]["degenerate"], true);
}

#[test]
fn analytic_malformed_json_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\"covariance\": oops").unwrap();
    let out = run(&["analytic", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line"), "diagnostics missing: {err}");
}

#[test]
fn simulate_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", base_config());
    let out_path = dir.path().join("batch.csv");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let csv = std::fs::read_to_string(&out_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "replication,seed,raw,standardized,flag");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 40);
    let first: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(first.len(), 5);
    assert_eq!(first[0], "0");
    assert_eq!(first[4], "false");
    assert!(first[2].parse::<f64>().is_ok());

    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("batch.csv.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["master_seed"], 11);
    assert_eq!(manifest["replications"], 40);
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn seed_flag_and_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", base_config());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    let cfg_s = cfg.to_str().unwrap();
    run(&["simulate", "--config", cfg_s, "--out", a.to_str().unwrap(), "--seed", "99"]);
    run_env(
        &["simulate", "--config", cfg_s, "--out", b.to_str().unwrap()],
        "PRSVAR_SEED",
        "99",
    );
    run(&["simulate", "--config", cfg_s, "--out", c.to_str().unwrap()]);
    let a = std::fs::read(&a).unwrap();
    let b = std::fs::read(&b).unwrap();
    let c = std::fs::read(&c).unwrap();
    assert_eq!(a, b, "flag and env override disagree");
    assert_ne!(a, c, "seed override had no effect");
}

#[test]
fn workers_flag_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", base_config());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let cfg_s = cfg.to_str().unwrap();
    run(&["simulate", "--config", cfg_s, "--out", a.to_str().unwrap(), "--workers", "1"]);
    run(&["simulate", "--config", cfg_s, "--out", b.to_str().unwrap(), "--workers", "4"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn verify_reports_checks_and_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base_config();
    v["simulation"]["replications"] = serde_json::json!(80);
    v["verify"] = serde_json::json!({
        "ks_max": 0.25,
        "mean_tolerance_sds": 6.0,
        "variance_ratio_range": [0.5, 1.5],
        "coverage_range": [0.85, 1.0]
    });
    let cfg = write_config(dir.path(), "c.json", v);
    let out_path = dir.path().join("verdict.json");
    let out = run(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let verdict: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(verdict["pass"], true);
    let checks = verdict["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 4);
    for check in checks {
        assert_eq!(check["pass"], true, "check failed: {check}");
    }
}

#[test]
fn sweep_lambda_grid_has_monotone_tilting() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base_config();
    v["simulation"]["estimator"] = serde_json::json!({"type": "reference_ridge", "lambda": 1.0});
    v["sweep"] = serde_json::json!({
        "vary": {"lambda": [0.01, 0.1, 1.0, 10.0, 100.0]},
        "laws": ["reference_accuracy"]
    });
    let cfg = write_config(dir.path(), "c.json", v);
    let out = run(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let tilt_col = header.iter().position(|&c| c == "tilting").unwrap();
    let tilts: Vec<f64> = lines
        .map(|l| l.split(',').nth(tilt_col).unwrap().parse().unwrap())
        .collect();
    assert_eq!(tilts.len(), 5);
    for w in tilts.windows(2) {
        assert!(w[1] >= w[0], "tilting not monotone: {tilts:?}");
    }
}

#[test]
fn sweep_n_grid_has_monotone_marginal_center() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base_config();
    v["sweep"] = serde_json::json!({
        "vary": {"n": [30.0, 60.0, 120.0, 480.0]},
        "laws": ["marginal_accuracy"]
    });
    let cfg = write_config(dir.path(), "c.json", v);
    let out = run(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let center_col = header.iter().position(|&c| c == "center").unwrap();
    let centers: Vec<f64> = lines
        .map(|l| l.split(',').nth(center_col).unwrap().parse().unwrap())
        .collect();
    assert_eq!(centers.len(), 4);
    for w in centers.windows(2) {
        assert!(w[1] >= w[0], "center not monotone in n: {centers:?}");
    }
}

#[test]
fn sweep_single_point_grid_yields_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base_config();
    v["sweep"] = serde_json::json!({
        "vary": {"h2_beta": [0.5]},
        "laws": ["marginal_accuracy"]
    });
    let cfg = write_config(dir.path(), "c.json", v);
    let out = run(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2, "expected header plus one row");
}

#[test]
fn sweep_without_grid_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", base_config());
    let out = run(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let mut v = base_config();
    v["sweep"] = serde_json::json!({"vary": {"lambda": []}, "laws": ["marginal_accuracy"]});
    let cfg = write_config(dir.path(), "empty.json", v);
    let out = run(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn from_file_covariance_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    // A 3x3 PSD matrix in the documented CSV format plus a mask file.
    let cov_path = dir.path().join("cov.csv");
    std::fs::write(&cov_path, "1.0,0.2,0.0\n0.2,1.0,0.2\n0.0,0.2,1.0\n").unwrap();
    let mask_path = dir.path().join("mask.txt");
    std::fs::write(&mask_path, "1\n0\n1\n").unwrap();

    let mut v = base_config();
    v["covariance"] = serde_json::json!({
        "kind": {"type": "from_file", "path": cov_path.to_str().unwrap()},
        "p": 3,
        "mask": {"type": "from_file", "path": mask_path.to_str().unwrap()}
    });
    v["population"]["n"] = serde_json::json!(30);
    v["population"]["n_z"] = serde_json::json!(20);
    let cfg = write_config(dir.path(), "c.json", v);
    let out = run(&["analytic", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["entries"][0]["inputs"]["m"], 2);

    // Non-PSD file input is a configuration error.
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1.0,2.0,0.0\n2.0,1.0,0.0\n0.0,0.0,1.0\n").unwrap();
    let mut v2: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    v2["covariance"]["kind"]["path"] = serde_json::json!(bad.to_str().unwrap());
    let cfg2 = write_config(dir.path(), "bad.json", v2);
    let out = run(&["analytic", "--config", cfg2.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ridge_optimal_lambda_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base_config();
    v["simulation"]["estimator"] = serde_json::json!({"type": "ridge", "lambda": "optimal"});
    v["simulation"]["target"] = serde_json::json!({"type": "accuracy"});
    let cfg = write_config(dir.path(), "c.json", v);
    let out = run(&["analytic", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // φ_n = 1, h² = 0.5 → λ* = 1.
    assert_eq!(report["entries"][0]["inputs"]["lambda"], 1.0);
}

#[test]
fn analytic_csv_format() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", base_config());
    let out = run(&["analytic", "--config", cfg.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("estimator,level,center,sd,eta,degenerate\n"));
    assert_eq!(text.lines().count(), 2);
}
