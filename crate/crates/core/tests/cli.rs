use std::path::Path;
use std::process::{Command, Output};

fn mimo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimo-cr")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Data rows of a CSV with `#` metadata lines.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn siso_capacity_matches_closed_form() {
    let o = mimo(&["siso-capacity", "--eta", "0.1", "--power", "10", "--sigma-sq", "1", "--ensemble", "rayleigh", "--samples", "100000", "--seed", "7"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("# seed: 7"));
    let r = &rows(&text)[0];
    let cap: f64 = r[3].parse().unwrap();
    assert!((cap - (1.0 + 10.0 * -(0.9f64).ln()).log2()).abs() < 0.05, "{cap}");
}

#[test]
fn cr_capacity_of_independent_source() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("independent_bern.csv");
    std::fs::write(&p, "x,y0,y1\nx0,0.25,0.25\nx1,0.25,0.25\n").unwrap();
    let o = mimo(&["cr-capacity", "--source", p.to_str().unwrap(), "--c", "0.3"]);
    assert!(o.status.success());
    let v: f64 = rows(&stdout(&o))[0][1].parse().unwrap();
    assert!((v - 0.3).abs() < 1e-3);
}

#[test]
fn power_overflow_tabulation() {
    let o = mimo(&["bounds", "--lemma", "power-overflow", "--m", "1", "--delta", "1", "--n", "10"]);
    let v: f64 = rows(&stdout(&o))[0][3].parse().unwrap();
    // (2 * 2^{-1/ln 2})^10
    let oracle = (2.0 * (-1.0 / std::f64::consts::LN_2).exp2()).powi(10);
    assert!((v - oracle).abs() < 1e-12 && (v - 0.0465).abs() < 5e-5);
}

#[test]
fn exit_codes() {
    assert_eq!(mimo(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(mimo(&["siso-capacity", "--eta", "abc"]).status.code(), Some(2));
    assert_eq!(mimo(&["cr-capacity", "--source", "/definitely/missing.csv", "--c", "0.1"]).status.code(), Some(3));
    let bad_eta = mimo(&["siso-capacity", "--eta", "1.0"]);
    assert_eq!(bad_eta.status.code(), Some(5));
    let err = String::from_utf8(bad_eta.stderr).unwrap();
    assert!(err.lines().next().unwrap().contains("eta"));
    assert_eq!(mimo(&["outage-capacity", "--power", "0"]).status.code(), Some(5));
    assert_eq!(mimo(&["verify", "--criteria", "4", "--mutation", "chernoff-exponent"]).status.code(), Some(4));
}

#[test]
fn outputs_are_identical_across_worker_counts() {
    let base = ["outage-capacity", "--eta", "0.1,0.3", "--power", "5", "--samples", "400", "--seed", "3"];
    let one = mimo(&[&base[..], &["--threads", "1"]].concat());
    let four = mimo(&[&base[..], &["--threads", "4"]].concat());
    assert!(one.status.success());
    assert_eq!(one.stdout, four.stdout);
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn config_values_sit_under_explicit_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "seed = 17\n[siso-capacity]\neta = 0.2\npower = 4.0\nsamples = 1000\n");
    let o = mimo(&["siso-capacity", "--config", &cfg, "--power", "8"]);
    let text = stdout(&o);
    assert!(text.contains("# seed: 17"));
    let r = &rows(&text)[0];
    assert_eq!((r[0].as_str(), r[1].as_str(), r[5].as_str()), ("0.2", "8", "1000"));
    let json_cfg = write(dir.path(), "c.json", r#"{"eta": 0.2, "power": 8, "samples": 1000, "seed": 17}"#);
    assert_eq!(stdout(&mimo(&["siso-capacity", "--config", &json_cfg])), text);
}

#[test]
fn protocol_run_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "p.toml",
        "seed = 5\n[simulate-protocol]\nn = 10\ntrials = 40\nstates = 3\ntransport = { kind = \"genie\", power = 100.0, sigma_sq = 1.0 }\n",
    );
    let out = dir.path().join("run.csv");
    let o = mimo(&["simulate-protocol", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(rows(&text).len(), 3);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["metadata"]["seed"], 5);
    for key in ["outage_fraction", "entropy_rate", "k_alphabet_size"] {
        assert!(summary["summary"].get(key).is_some(), "{key}");
    }
}

#[test]
fn id_demo_reports_json() {
    let o = mimo(&["id-demo", "--trials", "40"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"]["identity_count"], 16);
    assert_eq!(v["result"]["second_stage_messages"], 8);
    assert!(v["metadata"]["seed"].is_u64());
}
