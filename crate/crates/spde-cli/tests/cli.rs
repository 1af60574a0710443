//! End-to-end checks of the command-line interface: exit codes, file
//! outputs, determinism, and config validation.

use std::path::Path;
use std::process::{Command, Output};

fn spde(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spde"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL_NOISE: &str = r#"{
    "d": 2, "n": 8,
    "model": { "kind": "gaussian", "sigma": 0.2 }
}"#;

#[test]
fn noise_outputs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_NOISE);
    for out in ["a", "b"] {
        let r = spde(&["noise", "--config", &cfg, "--seed", "42", "--out", out], tmp.path());
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let a = std::fs::read(tmp.path().join("a/noise.bin")).unwrap();
    let b = std::fs::read(tmp.path().join("b/noise.bin")).unwrap();
    assert_eq!(a, b);
    let a = std::fs::read(tmp.path().join("a/noise.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/noise.csv")).unwrap();
    assert_eq!(a, b);
    // a different seed changes the draw
    let r = spde(&["noise", "--config", &cfg, "--seed", "43", "--out", "c"], tmp.path());
    assert!(r.status.success());
    let c = std::fs::read(tmp.path().join("c/noise.bin")).unwrap();
    assert_ne!(a.len(), 0);
    assert_ne!(std::fs::read(tmp.path().join("a/noise.bin")).unwrap(), c);
}

#[test]
fn noise_report_echoes_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_NOISE);
    let r = spde(&["noise", "--config", &cfg, "--out", "o"], tmp.path());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("o/noise_report.json")).unwrap())
            .unwrap();
    // defaults filled in alongside the explicit keys
    assert_eq!(report["config"]["n"], 8);
    assert_eq!(report["config"]["theta"], 12.0);
    assert_eq!(report["config"]["drift"]["kind"], "arctan_plus_linear");
    assert_eq!(report["psd_check"], "ok");
    assert_eq!(report["integrability"]["member"], true);
}

#[test]
fn riesz_exponent_out_of_range_is_a_validation_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{ "d": 2, "n": 6, "model": { "kind": "riesz", "eta": 2.5 } }"#,
    );
    let r = spde(&["noise", "--config", &cfg, "--out", "o"], tmp.path());
    assert_eq!(r.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&r.stderr);
    assert!(msg.contains("riesz"), "stderr: {msg}");
}

#[test]
fn oversized_lipschitz_constant_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{ "d": 4, "n": 4, "drift": { "kind": "linear", "slope": 100.0 } }"#,
    );
    let r = spde(&["solve", "--config", &cfg, "--out", "o"], tmp.path());
    assert_eq!(r.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&r.stderr);
    assert!(msg.contains("Lipschitz"), "stderr: {msg}");
}

#[test]
fn zero_data_solve_yields_zero_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
            "d": 2, "n": 4, "theta": 6.0,
            "drift": { "kind": "zero" },
            "forcing": { "kind": "zero" },
            "with_noise": false
        }"#,
    );
    let r = spde(&["solve", "--config", &cfg, "--out", "o"], tmp.path());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let bytes = std::fs::read(tmp.path().join("o/solution.bin")).unwrap();
    // header: d, n, seed; payload: 9 zero doubles
    assert_eq!(bytes.len(), 16 + 9 * 8);
    assert!(bytes[16..].iter().all(|&b| b == 0));
}

#[test]
fn short_ladder_reports_without_a_slope() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
            "d": 2, "n_ref": 16, "ladder": [4, 8], "theta": 6.0,
            "samples": 30,
            "model": { "kind": "gaussian", "sigma": 0.15 }
        }"#,
    );
    let r = spde(&["converge", "--config", &cfg, "--out", "o"], tmp.path());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("o/converge.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("o/converge_report.json")).unwrap(),
    )
    .unwrap();
    assert!(report["report"]["fit"].is_null());
    assert!(report["report"]["r_star"].as_f64().unwrap() > 0.0);

    // identical seed reproduces the estimates exactly
    let r = spde(&["converge", "--config", &cfg, "--out", "p"], tmp.path());
    assert!(r.status.success());
    let again = std::fs::read_to_string(tmp.path().join("p/converge.csv")).unwrap();
    assert_eq!(csv, again);
}

#[test]
fn kernel_command_validates_series_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
            "d": 2, "theta": 6.0, "lambda": 0.5, "alpha": 1.2,
            "kernel_resolutions": [8],
            "series_n_ref": 4
        }"#,
    );
    let r = spde(&["kernel", "--config", &cfg, "--out", "o"], tmp.path());
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn kernel_command_tabulates_single_resolution() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
            "d": 4, "theta": 6.0, "lambda": 0.5, "alpha": 1.2,
            "kernel_resolutions": [8],
            "epsilons": [0.4, 0.2, 0.1],
            "smoothing_samples": 300
        }"#,
    );
    let r = spde(&["kernel", "--config", &cfg, "--out", "o"], tmp.path());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("o/kernel_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["norm_table"].as_array().unwrap().len(), 1);
    assert!(report["norm_growth_ratio"].is_null());
    assert!(report["smoothing"]["slope"].as_f64().is_some());
}

#[test]
fn holder_command_writes_structure_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
            "d": 2, "n_ref": 16, "ladder": [4], "theta": 6.0,
            "samples": 10, "radii": [1, 2, 3],
            "model": { "kind": "gaussian", "sigma": 0.15 }
        }"#,
    );
    let r = spde(&["holder", "--config", &cfg, "--out", "o"], tmp.path());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("o/holder.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("o/holder_report.json")).unwrap(),
    )
    .unwrap();
    assert!(report["report"]["gaussian_slope"].as_f64().unwrap() > 0.0);
}

#[test]
fn default_solve_completes_quickly() {
    let tmp = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    // no config: benchmark defaults at the working resolution n = 8
    let r = spde(&["solve", "--out", "o"], tmp.path());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(start.elapsed().as_secs_f64() < 60.0);
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("o/solve_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["converged"], true);
    assert!(report["sup_norm"].as_f64().unwrap() > 0.0);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{ "d": 2, "resolutionn": 8 }"#);
    let r = spde(&["noise", "--config", &cfg, "--out", "o"], tmp.path());
    assert_eq!(r.status.code(), Some(2));
}
