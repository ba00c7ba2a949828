use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn dpac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpac"))
        .args(args)
        .env_remove("DP_CONSENSUS_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_config(dir: &Path, name: &str, algorithm: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    let text = format!(
        r#"{{
  "graph": {{ "kind": "cycle", "n": 10, "weight": {{ "uniform": 0.3 }} }},
  "privacy": {{ "epsilon": 10.0, "delta": 0.1, "mu": 5.0 }},
  "algorithm": {{ "kind": "{algorithm}"{extra} }},
  "paillier": {{ "key_bits": 256 }},
  "run": {{ "seed": 3 }}
}}"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

const DESIGN: &[&str] = &["design", "--epsilon", "10", "--delta", "0.1", "--mu", "5", "--n", "10", "--abar", "1e4"];

#[test]
fn design_gaussian_plan() {
    let out = dpac(&[DESIGN, &["--algorithm", "dishuf-gaussian", "--g", "0.01"]].concat());
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["family"], "gaussian");
    assert!((v["sigma_gamma"].as_f64().unwrap() - 0.45).abs() < 1e-3);
    assert_eq!(v["g_or_h"], 0.01);
    assert!(v["condition"]["holds"].as_bool().unwrap());
    assert!(v["condition"]["margin"].as_f64().unwrap().abs() < 1e-12);
    for key in ["sigma_eta", "sigma_xi", "predicted_mse"] {
        assert!(v[key].is_number(), "{key}");
    }
}

#[test]
fn design_laplace_plan_and_domain_error() {
    let out = dpac(&[DESIGN, &["--algorithm", "dishuf-laplace", "--h", "1.1"]].concat());
    assert!(out.status.success());
    assert!((stdout_json(&out)["sigma_gamma"].as_f64().unwrap() - 0.55).abs() < 1e-12);

    let out = dpac(&[DESIGN, &["--algorithm", "dishuf-laplace", "--h", "1.0"]].concat());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("h must exceed 1"));
}

#[test]
fn design_rejects_mismatched_flags() {
    for extra in [&["--algorithm", "dishuf-gaussian", "--h", "2"][..], &["--algorithm", "osp-laplace", "--g", "1"], &["--algorithm", "dishuf-gaussian"]] {
        let out = dpac(&[DESIGN, extra].concat());
        assert_eq!(out.status.code(), Some(2), "{extra:?}");
    }
}

#[test]
fn run_is_deterministic_and_writes_a_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "dishuf-gaussian", r#", "g": 1.0"#);
    let tr = dir.path().join("t.jsonl");
    let a = dpac(&["run", "--config", cfg.to_str().unwrap(), "--transcript", tr.to_str().unwrap()]);
    let b = dpac(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout_json(&a)["converged"].as_bool().unwrap());

    let text = std::fs::read_to_string(&tr).unwrap();
    let records: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let shuffle: Vec<&Value> = records.iter().filter(|r| r["phase"] == "shuffle").collect();
    assert_eq!(shuffle.len(), 3 * 20);
    assert!(shuffle.iter().all(|r| r["kind"] != "plaintext-state"));
    assert!(records.iter().any(|r| r["phase"] == "consensus"));
}

#[test]
fn run_without_noise_reaches_the_average() {
    let dir = tempfile::tempdir().unwrap();
    let extra = r#", "sigma_gamma": 0.0, "sigma_eta": 0.0, "sigma_xi": 0.0"#;
    let cfg = write_config(dir.path(), "c.json", "dishuf-gaussian", extra);
    let out = dpac(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    let d = v["d_star"].as_f64().unwrap();
    for x in v["final_state"].as_array().unwrap() {
        assert!((x.as_f64().unwrap() - d).abs() < 1e-7);
    }
}

#[test]
fn run_reports_unconverged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "osp-gaussian", "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace(r#""seed": 3"#, r#""seed": 3, "max_iters": 2"#);
    std::fs::write(&cfg, text).unwrap();
    assert_eq!(dpac(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn missing_seed_is_drawn_and_printed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "osp-laplace", "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace(r#""seed": 3"#, "");
    std::fs::write(&cfg, text).unwrap();
    let out = dpac(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("seed: "));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "osp-laplace", r#", "surprise": 1"#);
    assert_eq!(dpac(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(dpac(&["run", "--config", "/nonexistent.json"]).status.code(), Some(2));
}

#[test]
fn sweep_writes_table_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "dishuf-laplace", r#", "h": 2.0"#);
    let out_dir = dir.path().join("out");
    let args = [
        "--threads", "1", "sweep", "--config", cfg.to_str().unwrap(), "--param", "h", "--values", "4,3,2,1.1",
        "--trials", "50", "--backend", "plaintext", "--out", out_dir.to_str().unwrap(), "--stem", "table2",
    ];
    let out = dpac(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("table2.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.lines().last().unwrap().starts_with("dpca-laplace"));
    let json: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("table2.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 5);

    let bad = dpac(&["sweep", "--config", cfg.to_str().unwrap(), "--param", "k", "--values", "1", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn epsilon_sweep_has_three_rows_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "dishuf-gaussian", r#", "g": 1.0"#);
    let out_dir = dir.path().join("out");
    let out = dpac(&[
        "sweep", "--config", cfg.to_str().unwrap(), "--param", "epsilon", "--values", "0.1,1,10", "--trials", "10",
        "--backend", "plaintext", "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("sweep-epsilon.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 9);
}

#[test]
fn check_passes_designed_plans_and_flags_violations() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write_config(dir.path(), "ok.json", "dishuf-gaussian", r#", "g": 0.5"#);
    let out = dpac(&["check", "--config", ok.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout_json(&out)["holds"].as_bool().unwrap());

    let plan = stdout_json(&out);
    let half = plan["sigma_eta"].as_f64().unwrap() / 2.0;
    let gamma = plan["sigma_gamma"].as_f64().unwrap();
    let bad = write_config(dir.path(), "bad.json", "dishuf-gaussian", &format!(r#", "sigma_gamma": {gamma}, "sigma_eta": {half}"#));
    let out = dpac(&["check", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!stdout_json(&out)["holds"].as_bool().unwrap());

    let lap = write_config(dir.path(), "lap.json", "dishuf-laplace", r#", "sigma_gamma": 0.55, "sigma_eta": 1.0e9"#);
    assert_eq!(dpac(&["check", "--config", lap.to_str().unwrap()]).status.code(), Some(3));
}
