use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbm-chaos"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error(args: &[&str]) -> (i32, Value) {
    let out = run(args);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    (out.status.code().unwrap(), err)
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn calibrate_reports_unit_constant_for_brownian_motion() {
    let r = report(&["calibrate", "--hurst", "0.5", "--cells", "64"]);
    assert_eq!(r["command"], "calibrate");
    assert_eq!(r["result"]["c_h"], 1.0);
    assert_eq!(r["config"]["hurst"], 0.5);
    assert!(r["version"].is_string());
}

#[test]
fn calibrate_meets_the_smooth_covariance_tolerance() {
    let r = report(&["calibrate", "--hurst", "0.75", "--cells", "1024"]);
    let rows = r["result"]["covariance"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[2]["max_error"].as_f64().unwrap() <= 1e-3);
    assert_eq!(r["result"]["decreasing"], true);
}

#[test]
fn invalid_hurst_exits_with_two() {
    let (code, err) = error(&["calibrate", "--hurst", "0.2"]);
    assert_eq!(code, 2);
    assert_eq!(err["error"]["kind"], "invalid_hurst");
    assert_eq!(err["error"]["exit_code"], 2);
}

#[test]
fn regime_mismatches_are_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    for (body, kind) in [
        (r#"{"H": 0.3, "q": 4}"#, "regularity"),
        (r#"{"H": 0.75, "lambda": 0.5}"#, "regularity"),
        (r#"{"H": 0.75, "q": 1.2}"#, "regularity"),
        (r#"{"H": 0.3, "lambda": 0.1}"#, "regularity"),
        (r#"{"H": 0.75, "q": 4, "lambda": 0.5}"#, "invalid_input"),
        (r#"{"H": 0.75, "n": 4}"#, "invalid_input"),
        (
            r#"{"H": 0.75, "integrand": "poly:1"  , "n": 2}"#,
            "invalid_input",
        ),
        (r#"{"H": 0.75, "cells": 10, "stride": 3}"#, "invalid_input"),
        (
            r#"{"H": 0.75, "event": {"kind": "sup_above", "a": -1}}"#,
            "invalid_input",
        ),
        (r#"{"H": 0.75, "colour": 1}"#, "invalid_config"),
        (r#"{"T": 1}"#, "invalid_config"),
        (r#"[0.75]"#, "invalid_config"),
    ] {
        let cfg = write_config(dir.path(), "c.json", body);
        let (code, err) = error(&["simulate", "--config", &cfg]);
        assert_eq!(code, 2, "{body}");
        assert_eq!(err["error"]["kind"], kind, "{body}");
    }
    let (code, _) = error(&["simulate", "--config", "/nonexistent.json"]);
    assert_eq!(code, 2);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"H": 0.3, "N": 32, "seed": 1, "n_samples": 50}"#,
    );
    let r = report(&[
        "simulate",
        "--config",
        &cfg,
        "--hurst",
        "0.75",
        "--seed",
        "9",
        "--samples",
        "40",
    ]);
    assert_eq!(r["config"]["hurst"], 0.75);
    assert_eq!(r["config"]["cells"], 32);
    assert_eq!(r["config"]["seed"], 9);
    assert_eq!(r["result"]["n_samples"], 40);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"H": 0.3, "N": 32, "n": 2, "integrand": "poly:1,0.5", "n_samples": 200, "seed": 4}"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, workers) in [(&a, "1"), (&b, "3")] {
        let o = out.to_string_lossy();
        report(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            &o,
            "--workers",
            workers,
            "--dump-kernel",
        ]);
    }
    for f in ["paths.csv", "kernel.csv", "simulate.json"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = String::from_utf8(std::fs::read(a.join("paths.csv")).unwrap()).unwrap();
    assert_eq!(csv.lines().next(), Some("sample_index,t,value"));
    assert_eq!(csv.lines().count(), 1 + 200 * 33);
}

#[test]
fn simulated_endpoint_variance_matches_the_oracle() {
    let r = report(&[
        "simulate",
        "--hurst",
        "0.75",
        "--cells",
        "32",
        "--order",
        "2",
        "--samples",
        "4000",
    ]);
    let est = &r["result"]["endpoint"];
    let var = est["variance"].as_f64().unwrap();
    let oracle = r["result"]["endpoint_variance_oracle"].as_f64().unwrap();
    // the sample variance of a second-chaos variable has relative error ~ sqrt(κ/n)
    assert!((var / oracle - 1.0).abs() < 0.15, "{var} vs {oracle}");
}

#[test]
fn moments_respect_hypercontractivity() {
    let r = report(&[
        "moments",
        "--hurst",
        "0.3",
        "--cells",
        "64",
        "--order",
        "2",
        "--samples",
        "4000",
    ]);
    let res = &r["result"];
    assert!(res["ratio"].as_f64().unwrap() <= 3.0 * 1.1);
    assert_eq!(res["within_bound"], true);
    assert!(res["second"]["exact"].as_f64().unwrap() > 0.0);
    assert!(res["fourth"]["exact"].is_null());
}

#[test]
fn rough_second_order_bound_slope() {
    let r = report(&["bounds", "--hurst", "0.3", "--cells", "512", "--order", "2"]);
    let slope = r["result"]["slope"].as_f64().unwrap();
    assert!(slope >= 0.3 - 0.05, "{slope}");
    assert_eq!(r["result"]["pass"], true);
    let (code, err) = error(&["bounds", "--hurst", "0.3", "--cells", "64"]);
    assert_eq!(code, 2);
    assert_eq!(err["error"]["kind"], "grid_mismatch");
}

#[test]
fn first_order_rate_via_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"H": 0.75, "N": 128, "event": {"kind": "endpoint_above", "a": 2.0}}"#,
    );
    let out = dir.path().join("o");
    let r = report(&["rate", "--config", &cfg, "--out", &out.to_string_lossy()]);
    let rate = r["result"]["rate"].as_f64().unwrap();
    assert!((rate - 2.0).abs() < 0.02, "{rate}");
    assert_eq!(r["result"]["method"], "closed_form_projection");
    let csv = std::fs::read_to_string(out.join("minimizer.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 128);
    let cfg = write_config(
        dir.path(),
        "h.json",
        r#"{"H": 0.75, "N": 16, "event": {"kind": "holder_norm_above", "gamma": 0.5, "a": 2.0}}"#,
    );
    assert_eq!(error(&["rate", "--config", &cfg]).0, 2);
}

#[test]
fn ldp_on_the_first_order_endpoint_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"H": 0.75, "N": 64, "n_samples": 100000, "seed": 3,
            "event": {"kind": "endpoint_above", "a": 1.0}}"#,
    );
    let out = dir.path().join("o");
    let r = report(&["ldp", "--config", &cfg, "--out", &out.to_string_lossy()]);
    assert_eq!(r["result"]["verdict"], "PASS", "{}", r["result"]);
    let csv = std::fs::read_to_string(out.join("ldp.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("epsilon,p_hat,stderr,eps_log_p,gap")
    );
    assert!(out.join("ldp.json").exists());
}

#[test]
fn holder_study_reports_both_exponents() {
    let r = report(&[
        "holder",
        "--hurst",
        "0.75",
        "--cells",
        "32",
        "--samples",
        "100",
    ]);
    let rows = r["result"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["expectation"], "stable");
    assert_eq!(rows[1]["expectation"], "divergent");
    assert_eq!(r["result"]["cells"], serde_json::json!([32, 64]));
    let (code, _) = error(&[
        "holder",
        "--hurst",
        "0.75",
        "--cells",
        "32",
        "--samples",
        "10",
    ]);
    assert_eq!(code, 2);
}

#[test]
fn dump_kernel_needs_an_output_directory() {
    let (code, _) = error(&["calibrate", "--hurst", "0.75", "--dump-kernel"]);
    assert_eq!(code, 2);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k");
    report(&[
        "calibrate",
        "--hurst",
        "0.75",
        "--cells",
        "16",
        "--out",
        &out.to_string_lossy(),
        "--dump-kernel",
    ]);
    let csv = std::fs::read_to_string(out.join("kernel.csv")).unwrap();
    assert!(csv.lines().count() > 16);
    assert!(out.join("calibrate.json").exists());
}
