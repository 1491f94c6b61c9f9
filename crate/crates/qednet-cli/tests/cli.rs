//! End-to-end tests of the binary: exit codes, report contents, and
//! byte-level determinism.

use std::path::Path;
use std::process::{Command, Output};

use qednet::network::n_network_demo;

fn qednet_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qednet"))
}

fn run(args: &[&str]) -> Output {
    qednet_bin().args(args).output().expect("binary runs")
}

fn write_fixture(dir: &Path) -> String {
    let path = dir.join("nnet.json");
    std::fs::write(&path, n_network_demo().to_json()).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn analyze_reports_the_parameter_by_all_routes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_fixture(dir.path());
    let out = run(&["analyze", "--spec", &spec]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let doc = stdout_json(&out);
    assert_eq!(doc["swss"]["vartheta_p"].as_f64().unwrap(), 2.0);
    assert_eq!(doc["swss_oracle_vartheta_p"].as_f64().unwrap(), 2.0);
    assert_eq!(doc["swss_drift_vartheta_p"].as_f64().unwrap(), 2.0);
    assert_eq!(doc["stability"]["classification"], "stabilizable");
    assert_eq!(doc["failed"], false);
    for check in doc["cross_checks"].as_array().unwrap() {
        assert_eq!(check["passed"], true, "check {check}");
    }
}

#[test]
fn analyze_certify_attaches_a_positive_recurrence_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_fixture(dir.path());
    let out = run(&["analyze", "--spec", &spec, "--certify", "--anchor", "2:2"]);
    assert!(out.status.success());
    let doc = stdout_json(&out);
    assert_eq!(doc["certificate"]["kind"], "positive-recurrence");
    assert!(doc["certificate"]["kappa1"].as_f64().unwrap() > 0.0);
    assert!(doc["certificate"]["eta"].as_f64().unwrap() > 0.0);
    // Anchor (2,2) pins S[ihat][ihat] = 1 at ihat = class 2.
    assert_eq!(doc["certificate"]["s"][1][1].as_f64().unwrap(), 1.0);
}

#[test]
fn analyze_certify_attaches_a_transience_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = n_network_demo();
    for v in spec.nu_hat.values_mut() {
        *v = -1.0;
    }
    let path = dir.path().join("transient.json");
    std::fs::write(&path, spec.to_json()).unwrap();
    let out = run(&["analyze", "--spec", path.to_str().unwrap(), "--certify"]);
    assert!(out.status.success());
    let doc = stdout_json(&out);
    assert_eq!(doc["stability"]["classification"], "transient");
    assert_eq!(doc["stability"]["vartheta_p"].as_f64().unwrap(), -2.0);
    assert_eq!(doc["certificate"]["kind"], "transience");
    assert!(doc["certificate"]["min_margin"].as_f64().unwrap() > 0.0);
}

#[test]
fn malformed_spec_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{ not json").unwrap();
    let out = run(&["analyze", "--spec", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_spec_file_exits_2() {
    let out = run(&["analyze", "--spec", "/nonexistent/nowhere.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_tree_spec_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = n_network_demo();
    // Adding the (2, 1) edge closes a cycle through both pools.
    spec.edges.push(qednet::network::EdgeSpec {
        class: "2".into(),
        pool: "1".into(),
        mu: 1.0,
        mu_hat: 0.0,
    });
    let path = dir.path().join("cycle.json");
    std::fs::write(&path, spec.to_json()).unwrap();
    let out = run(&["analyze", "--spec", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not a tree"));
}

#[test]
fn unknown_subcommand_exits_64() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn unknown_flag_exits_64() {
    let out = run(&["analyze", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn whatif_keeps_the_parameter_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_fixture(dir.path());
    let out = run(&["whatif", "--spec", &spec, "--from", "1", "--to", "2", "--delta", "0.4"]);
    assert!(out.status.success());
    let doc = stdout_json(&out);
    assert_eq!(doc["before"]["vartheta_p"], doc["after"]["vartheta_p"]);
    assert_eq!(doc["invariant_ok"], true);
    // The moved capacity lands scaled by the pool-to-pool gain.
    assert_eq!(doc["after"]["nu_hat"]["1"].as_f64().unwrap(), 0.6);
    assert_eq!(doc["after"]["nu_hat"]["2"].as_f64().unwrap(), 1.2);
}

#[test]
fn verify_passes_and_catches_corruption() {
    let out = run(&["verify", "--trials", "5", "--fixture"]);
    assert!(out.status.success());
    let doc = stdout_json(&out);
    assert_eq!(doc["all_passed"], true);
    let checks = doc["checks"].as_array().unwrap();
    let control = checks
        .iter()
        .find(|c| c["name"] == "gain-corruption-negative-control")
        .expect("negative control present");
    assert_eq!(control["passed"], true);
}

#[test]
fn verify_single_trial_runs_the_fixture_deterministically() {
    let a = run(&["verify", "--trials", "1", "--fixture", "--json"]);
    let b = run(&["verify", "--trials", "1", "--fixture", "--json"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn analyze_output_bytes_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_fixture(dir.path());
    let a = run(&["analyze", "--spec", &spec, "--certify"]);
    let b = run(&["analyze", "--spec", &spec, "--certify"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn out_dir_receives_report_and_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_fixture(dir.path());
    let out_dir = dir.path().join("artifacts");
    let out = run(&[
        "simulate-ctmc",
        "--spec",
        &spec,
        "--n",
        "100",
        "--horizon",
        "5",
        "--reps",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("ctmc-summary.json").exists());
    assert!(out_dir.join("ctmc-rep000.csv").exists());
    assert!(out_dir.join("ctmc-rep001.csv").exists());
    let header = std::fs::read_to_string(out_dir.join("ctmc-rep000.csv")).unwrap();
    assert!(header.starts_with("t,x_1,x_2,q_1,q_2,y_1,y_2\n"));
    // The written summary is the stdout report plus a trailing newline.
    let file = std::fs::read(out_dir.join("ctmc-summary.json")).unwrap();
    assert_eq!(file, out.stdout);
}

#[test]
fn sde_summary_compares_against_the_predicted_idleness() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_fixture(dir.path());
    let out = run(&[
        "simulate-sde",
        "--spec",
        &spec,
        "--anchor",
        "2:2",
        "--horizon",
        "40",
        "--reps",
        "2",
        "--json",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let doc = stdout_json(&out);
    assert_eq!(doc["predicted_idleness"]["target"].as_f64().unwrap(), 1.5);
    assert!(doc["predicted_idleness"]["estimate"].as_f64().unwrap() > 0.0);
    assert!(doc["predicted_idleness"]["stderr"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_ctmc_without_an_order_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_fixture(dir.path());
    let out = run(&["simulate-ctmc", "--spec", &spec, "--horizon", "5"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_anchor_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_fixture(dir.path());
    // (class 2, pool 1) is not an edge of the demo tree.
    let out = run(&["analyze", "--spec", &spec, "--anchor", "2:1"]);
    assert_eq!(out.status.code(), Some(3));
    // Garbled anchor syntax is also a model-argument error.
    let out = run(&["analyze", "--spec", &spec, "--anchor", "nope"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_p_vector_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_fixture(dir.path());
    let out = run(&["analyze", "--spec", &spec, "--p", "0.5,0.25,0.25"]);
    assert_eq!(out.status.code(), Some(3));
    let out = run(&["analyze", "--spec", &spec, "--p", "0.7,0.7"]);
    assert_eq!(out.status.code(), Some(3));
}
