use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn vbboost(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vbboost"))
        .args(args)
        .env_remove("VBBOOST_SEED")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn minimal_curvature_config_prints_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"command": "curvature", "d": 1, "M": 1, "c0": 1.5, "sigma_n": 1, "curvature_trials": 200}"#)
        .unwrap();
    let v = stdout_json(&vbboost(&["--config", cfg.to_str().unwrap()]));
    let report = &v["report"];
    assert_eq!(report["trials"], 200);
    assert!(report["empirical_sup"].as_f64().unwrap() <= report["worst_case_bound"].as_f64().unwrap());
    assert_eq!(report["chi2_violations"], 0);
}

#[test]
fn out_of_range_c0_is_a_config_error() {
    let out = vbboost(&["curvature", "--c0", "2.5"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "config");
    assert!(err["message"].as_str().unwrap().contains("c0 must lie in (1, 2)"));
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"command": "curvature", "c_zero": 1.5}"#).unwrap();
    let out = vbboost(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_command_is_a_config_error() {
    assert_eq!(vbboost(&["--seed", "1"]).status.code(), Some(2));
}

#[test]
fn seed_defaults_to_zero_and_respects_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let v = stdout_json(&vbboost(&[
        "curvature",
        "--curvature-trials",
        "50",
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert_eq!(v["metadata"]["seed"], 0);
    assert_eq!(v["metadata"]["seed_source"], "default");
    let meta: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 0);
    assert_eq!(meta["config"]["seed"], 0);

    let run = |extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_vbboost"));
        cmd.args(["curvature", "--curvature-trials", "50"]).args(extra).env("VBBOOST_SEED", "17");
        stdout_json(&cmd.output().unwrap())
    };
    let env = run(&[]);
    assert_eq!(env["metadata"]["seed"], 17);
    assert_eq!(env["metadata"]["seed_source"], "environment");
    let flag = run(&["--seed", "3"]);
    assert_eq!(flag["metadata"]["seed"], 3);
    assert_eq!(flag["metadata"]["seed_source"], "flag");
}

#[test]
fn boost_writes_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let out = vbboost(&["boost", "--iterations", "10", "--out", dir.path().to_str().unwrap()]);
    stdout_json(&out);
    let csv = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    for name in ["report.json", "metadata.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn limits_report_carries_the_ks_distance() {
    let v = stdout_json(&vbboost(&["validate-prop1"]));
    let ks = v["report"]["result"]["tests"]["ks_distance"].as_f64().unwrap();
    assert!(ks > 0.0 && ks < 1.0);
    assert_eq!(v["metadata"]["command"], "validate-limits");
}

#[test]
fn repeated_runs_write_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["validate-limits", "validate-boundedness", "boost"] {
        let mut files = Vec::new();
        for run in ["a", "b"] {
            let out_dir = dir.path().join(format!("{cmd}-{run}"));
            let out = vbboost(&[cmd, "--replicates", "30", "--seed", "11", "--out", out_dir.to_str().unwrap()]);
            stdout_json(&out);
            let name = if cmd == "boost" { "trace.csv" } else { "raw.csv" };
            files.push(fs::read(out_dir.join(name)).unwrap());
        }
        assert_eq!(files[0], files[1], "{cmd}");
    }
}

#[test]
fn csv_headers_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let run = |args: &[&str], sub: &str| {
        let d = p.join(sub);
        let mut all = args.to_vec();
        all.extend(["--out", d.to_str().unwrap()]);
        stdout_json(&vbboost(&all));
        d
    };
    let d = run(&["boost", "--iterations", "2", "--curvature-trials", "20"], "boost");
    assert_eq!(header(&d.join("trace.csv")), "k,gamma,mu1,sigma,objective,stderr,bound_empirical,bound_nominal");
    let d = run(&["boost", "--iterations", "1", "--dim", "2", "--curvature-trials", "20"], "boost2");
    assert_eq!(
        header(&d.join("trace.csv")),
        "k,gamma,mu1,mu2,sigma,objective,stderr,bound_empirical,bound_nominal"
    );
    let d = run(&["validate-thm1", "--replicates", "5"], "thm");
    assert_eq!(header(&d.join("raw.csv")), "n,replicate,statistic,value,seed");
    let d = run(&["validate-convergence", "--n-values", "1"], "conv");
    assert_eq!(header(&d.join("raw.csv")), "n,replicate,statistic,value,seed");
    let d = run(&["curvature", "--curvature-trials", "10"], "curv");
    assert_eq!(header(&d.join("trials.csv")), "trial,components,alpha,scaled_bregman,ln_chi2_bound");
    let d = run(&["lmo-debug", "--n", "10"], "lmo");
    assert_eq!(header(&d.join("descent.csv")), "restart,step,objective");
    let d = run(&["audit-expfam", "--family", "bernoulli", "--audit-samples", "1000"], "audit");
    assert_eq!(
        header(&d.join("points.csv")),
        "theta1,kl,bregman,identity_error,mu2_closed_form,mu2_monte_carlo,mu2_std_error"
    );
}

#[test]
fn bandwidth_outside_the_band_fails_plan_construction() {
    let out = vbboost(&["validate-thm1", "--bandwidth-exponent", "-1", "--replicates", "2"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["message"].as_str().unwrap().contains("bandwidth"));
}
