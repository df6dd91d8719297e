use std::path::Path;
use std::process::Command;

use hjb_cli::{cmd_check, cmd_solve, cmd_sweep, cmd_verify, CliError, RunConfig};
use serde_json::Value;

fn merton_config(dir: &Path, extra: &str) -> String {
    format!(
        r#"{{
            "schema_version": 1,
            "model": {{ "name": "merton_constant", "params": {{ "sigma": 0.2, "mu": 0.08, "a": 0.5, "T": 1.0 }} }},
            "grid": {{ "nodes": [21, 21], "time_steps": 32 }},
            "monte_carlo": {{ "seed": 11, "n_paths": 2000, "n_steps": 32 }},
            "point": {{ "t0": 0.0, "z0": [0.0, 0.0], "w0": 1.0 }},
            {extra}
            "output_dir": {:?}
        }}"#,
        dir
    )
}

fn scott_config(dir: &Path, seed: u64) -> RunConfig {
    RunConfig::parse(&format!(
        r#"{{
            "schema_version": 1,
            "model": {{ "name": "scott_bounded_vol" }},
            "grid": {{ "nodes": [9, 41], "time_steps": 100 }},
            "monte_carlo": {{ "seed": {seed}, "n_paths": 4000, "n_steps": 32 }},
            "point": {{ "t0": 0.0, "z0": [0.0, 0.0], "w0": 1.0 }},
            "output_dir": {:?}
        }}"#,
        dir
    ))
    .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn hjb(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_hjb")).args(args).output().unwrap().status.code().unwrap()
}

#[test]
fn check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("merton.json");
    std::fs::write(&good, merton_config(&dir.path().join("m"), "")).unwrap();
    assert_eq!(hjb(&["check", "--config", good.to_str().unwrap()]), 0);
    let report = read_json(&dir.path().join("m/conditions.json"));
    assert_eq!(report["schema_version"], 1);
    assert!(report["records"].as_array().unwrap().iter().all(|r| r["pass"] == true));

    let ou = dir.path().join("ou.json");
    let text = merton_config(&dir.path().join("ou"), r#""conditions": { "domain": { "t": [0, 1], "lower": [-3, -400], "upper": [3, 400] } },"#)
        .replace(
            r#""name": "merton_constant", "params": { "sigma": 0.2, "mu": 0.08, "a": 0.5, "T": 1.0 }"#,
            r#""name": "scott_bounded_vol", "params": { "ou_drift": 1 }, "unchecked": true"#,
        );
    std::fs::write(&ou, text).unwrap();
    assert_eq!(hjb(&["check", "--config", ou.to_str().unwrap()]), 1);
    let report = read_json(&dir.path().join("ou/conditions.json"));
    let b3 = report["records"].as_array().unwrap().iter().find(|r| r["condition"] == "B3").unwrap();
    assert_eq!(b3["pass"], false);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"schema_version\": 1, ").unwrap();
    assert_eq!(hjb(&["check", "--config", bad.to_str().unwrap()]), 2);
    assert_eq!(hjb(&["check", "--config", dir.path().join("missing.json").to_str().unwrap()]), 2);
    assert_eq!(hjb(&["frobnicate"]), 2);
}

#[test]
fn solve_then_verify_merton() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(&merton_config(dir.path(), r#""cutoffs": [0.01, 0.1, 1.0],"#)).unwrap();
    assert!(matches!(cmd_verify(&cfg, false), Err(CliError::Usage(_))));

    let solved = cmd_solve(&cfg).unwrap();
    assert!(solved.passed);
    let summary = read_json(&dir.path().join("summary.json"));
    assert!((summary["values"]["u"].as_f64().unwrap() + 0.125).abs() < 1e-3);
    assert!((summary["values"]["pi"][0].as_f64().unwrap() - 5.0).abs() < 1e-9);
    assert_eq!(summary["terminal"]["pass"], true);
    let rows = summary["cutoff_table"]["rows"].as_array().unwrap();
    let diffs: Vec<f64> = rows.iter().map(|r| r["sup_diff"].as_f64().unwrap()).collect();
    assert!(diffs.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(diffs[2], 0.0);

    let csv = std::fs::read_to_string(dir.path().join("field.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,x,y,u,u_x,u_y,pi"));
    assert_eq!(csv.lines().count(), 1 + 33 * 21 * 21);

    let verified = cmd_verify(&cfg, false).unwrap();
    assert!(verified.passed);
    let report = read_json(&dir.path().join("verify.json"));
    let v_star = 2.0 * 0.125_f64.exp();
    let girsanov = &report["girsanov"];
    let se = girsanov["stderr"].as_f64().unwrap();
    assert!((girsanov["mean"].as_f64().unwrap() - v_star).abs() <= 3.0 * se + 1e-9);
    for c in report["comparisons"].as_array().unwrap() {
        assert_eq!(c["pass"], true, "{c}");
    }
    for g in report["dual_gradient"].as_array().unwrap() {
        assert_eq!(g["mean"].as_f64(), Some(0.0));
    }
}

#[test]
fn zero_policy_is_flagged_suboptimal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(&merton_config(dir.path(), "")).unwrap();
    cmd_solve(&cfg).unwrap();
    let outcome = cmd_verify(&cfg, true).unwrap();
    assert!(outcome.passed);
    let report = read_json(&dir.path().join("verify.json"));
    assert_eq!(report["policy"], "zero");
    assert_eq!(report["direct"]["mean"].as_f64(), Some(1.0 / 0.5));
    assert_eq!(report["direct"]["stderr"].as_f64(), Some(0.0));
    assert_eq!(report["suboptimal"], true);
}

#[test]
fn stale_field_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(&merton_config(dir.path(), "")).unwrap();
    cmd_solve(&cfg).unwrap();
    let other = cfg.with_parameter("a", 0.3).unwrap();
    let err = cmd_verify(&other, false).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn verify_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scott_config(dir.path(), 1);
    cmd_solve(&cfg).unwrap();
    let path = dir.path().join("verify.json");
    cmd_verify(&cfg, false).unwrap();
    let first = std::fs::read(&path).unwrap();
    cmd_verify(&cfg, false).unwrap();
    assert_eq!(first, std::fs::read(&path).unwrap());

    let reseeded = cfg.clone().with_overrides(None, Some(2));
    cmd_verify(&reseeded, false).unwrap();
    let a: Value = serde_json::from_slice(&first).unwrap();
    let b = read_json(&path);
    for name in ["direct", "girsanov", "dual_value"] {
        let (m1, s1) = (a[name]["mean"].as_f64().unwrap(), a[name]["stderr"].as_f64().unwrap());
        let (m2, s2) = (b[name]["mean"].as_f64().unwrap(), b[name]["stderr"].as_f64().unwrap());
        assert_ne!(m1, m2);
        assert!((m1 - m2).abs() <= 4.0 * (s1 * s1 + s2 * s2).sqrt(), "{name}: {m1} vs {m2}");
    }
}

#[test]
fn sweep_power_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(&merton_config(dir.path(), "")).unwrap();
    let outcome = cmd_sweep(&cfg, "a", &[-1.0, 0.3, 0.5]).unwrap();
    assert!(outcome.passed);
    let mut reader = csv::Reader::from_path(&outcome.files[0]).unwrap();
    let header = reader.headers().unwrap().clone();
    let u_col = header.iter().position(|h| h == "u").unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let a: f64 = row[1].parse().unwrap();
        let k = 0.5 * a / (1.0 - a) * 0.01 / 0.04;
        let u: f64 = row[u_col].parse().unwrap();
        assert!((u + k).abs() < 1e-3, "a = {a}: u = {u}, expected {}", -k);
    }
}

#[test]
fn empty_sweep_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(&merton_config(dir.path(), "")).unwrap();
    let outcome = cmd_sweep(&cfg, "a", &[]).unwrap();
    assert!(outcome.passed);
    let text = std::fs::read_to_string(&outcome.files[0]).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("axis,value,u,v,pi,"));
    assert!(cmd_sweep(&cfg, "../a", &[]).is_err());
}

#[test]
fn cutoff_sweep_reproduces_convergence_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(&merton_config(dir.path(), r#""cutoffs": [0.01, 0.1, 1.0],"#)).unwrap();
    cmd_solve(&cfg).unwrap();
    let table = read_json(&dir.path().join("summary.json"))["cutoff_table"]["rows"].clone();
    let outcome = cmd_sweep(&cfg, "cutoff", &[0.01, 0.1, 1.0]).unwrap();
    let mut reader = csv::Reader::from_path(&outcome.files[0]).unwrap();
    let header = reader.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (diff_col, active_col) = (col("sup_diff"), col("active_nodes"));
    for (row, expected) in reader.records().map(Result::unwrap).zip(table.as_array().unwrap()) {
        assert_eq!(row[diff_col].parse::<f64>().unwrap(), expected["sup_diff"].as_f64().unwrap());
        assert_eq!(row[active_col].parse::<u64>().unwrap(), expected["active_nodes"].as_u64().unwrap());
    }
}

#[test]
fn check_writes_versioned_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(&merton_config(dir.path(), r#""conditions": { "samples": 50 },"#)).unwrap();
    let outcome = cmd_check(&cfg).unwrap();
    assert!(outcome.passed);
    let report = read_json(&outcome.files[0]);
    assert_eq!(report["model"], "merton_constant");
    assert_eq!(report["records"][0]["samples"], 50);
}
