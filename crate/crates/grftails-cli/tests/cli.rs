//! End-to-end tests of the binary: exit codes, report shapes, determinism.

use std::io::Write;
use std::process::{Command, Output};

fn write_config(content: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(content.as_bytes()).unwrap();
    f.flush().unwrap();
    f
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grftails"))
        .args(args)
        .env_remove("GRFTAILS_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON report")
}

const STD_KERNEL: &str = r#""kernel": {"family": "sq_exp", "d": 1, "L": [[1.0]]}"#;

#[test]
fn moments_reports_gamma_det() {
    let cfg = write_config(&format!("{{{STD_KERNEL}}}"));
    let out = run(&["moments", "--config", cfg.path().to_str().unwrap()]);
    let v = stdout_json(&out);
    assert!((v["gamma_det"].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert_eq!(v["mu20"][0].as_f64().unwrap(), -1.0);
}

#[test]
fn malformed_config_exits_2() {
    let cfg = write_config("{not json");
    let out = run(&["moments", "--config", cfg.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_2() {
    let cfg = write_config(r#"{"kernel": {"family": "sq_exp", "d": 1, "L": [[1.0]]}, "bogus": 1}"#);
    let out = run(&["moments", "--config", cfg.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rat_quad_alpha_bound_names_bound() {
    let cfg = write_config(
        r#"{"kernel": {"family": "rat_quad", "d": 2, "L": [[1.0,0.0],[0.0,1.0]], "alpha": 3.0}}"#,
    );
    let out = run(&["moments", "--config", cfg.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("d/2 + 3"), "stderr: {err}");
}

#[test]
fn approx_scales_linearly_with_measure() {
    let base = |hi: f64| {
        format!(
            r#"{{{STD_KERNEL}, "domain": [[0.0, {hi}]], "sigma": 1.0, "b": 100.0}}"#
        )
    };
    let one = stdout_json(&run(&[
        "approx",
        "--config",
        write_config(&base(1.0)).path().to_str().unwrap(),
    ]));
    let two = stdout_json(&run(&[
        "approx",
        "--config",
        write_config(&base(2.0)).path().to_str().unwrap(),
    ]));
    let ratio = two["probability"].as_f64().unwrap() / one["probability"].as_f64().unwrap();
    assert!((ratio - 2.0).abs() < 1e-9);
}

#[test]
fn approx_target_prob_round_trips() {
    let cfg = write_config(&format!(
        r#"{{{STD_KERNEL}, "domain": [[0.0, 1.0]], "sigma": 1.0, "target_prob": 1e-4}}"#
    ));
    let first = stdout_json(&run(&["approx", "--config", cfg.path().to_str().unwrap()]));
    assert!((first["probability"].as_f64().unwrap() - 1e-4).abs() / 1e-4 < 1e-6);
    let b = first["b"].as_f64().unwrap();
    let cfg2 = write_config(&format!(
        r#"{{{STD_KERNEL}, "domain": [[0.0, 1.0]], "sigma": 1.0, "b": {b}}}"#
    ));
    let second = stdout_json(&run(&["approx", "--config", cfg2.path().to_str().unwrap()]));
    assert!((second["probability"].as_f64().unwrap() - 1e-4).abs() / 1e-4 < 1e-6);
}

#[test]
fn approx_rejects_both_threshold_forms() {
    let cfg = write_config(&format!(
        r#"{{{STD_KERNEL}, "domain": [[0.0, 1.0]], "sigma": 1.0, "b": 10.0, "target_prob": 0.5}}"#
    ));
    let out = run(&["approx", "--config", cfg.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infeasible_threshold_exits_3() {
    let cfg = write_config(&format!(
        r#"{{{STD_KERNEL}, "domain": [[0.0, 1.0]], "sigma": 1.0, "b": 2.0}}"#
    ));
    let out = run(&["approx", "--config", cfg.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("minimum admissible b"));
}

#[test]
fn validate_is_deterministic_with_exact_header() {
    let cfg = write_config(&format!(
        r#"{{{STD_KERNEL}, "domain": [[0.0, 1.0]], "sigma": 1.0,
            "target_probs": [1e-3, 1e-4],
            "mc": {{"n_samples": 5000, "seed": 7, "workers": 2}}}}"#
    ));
    let a = run(&["validate", "--config", cfg.path().to_str().unwrap()]);
    let b = run(&["validate", "--config", cfg.path().to_str().unwrap()]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout, "same config and seed must be byte-identical");
    let text = String::from_utf8(a.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("b,u,approx,is_estimate,std_error,ratio"));
    assert_eq!(lines.count(), 2);
    assert!(!text.contains('\r'), "LF line endings only");

    // worker count must not change the numbers
    let c = run(&[
        "validate",
        "--config",
        cfg.path().to_str().unwrap(),
        "--workers",
        "8",
    ]);
    assert_eq!(c.stdout, b.stdout);
}

#[test]
fn validate_requires_seed() {
    let cfg = write_config(&format!(
        r#"{{{STD_KERNEL}, "domain": [[0.0, 1.0]], "sigma": 1.0, "target_probs": [1e-3]}}"#
    ));
    let out = run(&["validate", "--config", cfg.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    // the --seed flag satisfies the requirement
    let ok = run(&[
        "validate",
        "--config",
        cfg.path().to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert!(ok.status.success());
}

#[test]
fn validate_json_format_carries_log10_fields() {
    let cfg = write_config(&format!(
        r#"{{{STD_KERNEL}, "domain": [[0.0, 1.0]], "sigma": 1.0,
            "target_probs": [1e-3], "mc": {{"n_samples": 4000, "seed": 5}}}}"#
    ));
    let out = run(&[
        "validate",
        "--config",
        cfg.path().to_str().unwrap(),
        "--format",
        "json",
    ]);
    let v = stdout_json(&out);
    let row = &v[0];
    assert!((row["approx_log10"].as_f64().unwrap() + 3.0).abs() < 1e-6);
    assert!(row["is_estimate_log10"].as_f64().unwrap() < 0.0);
}

#[test]
fn u_solve_reports_residual() {
    let cfg = write_config(r#"{"sigma": 1.0, "d": 1, "b": 1e6}"#);
    let out = stdout_json(&run(&["u-solve", "--config", cfg.path().to_str().unwrap()]));
    assert!(out["relative_residual"].as_f64().unwrap() < 1e-10);
    assert!(out["u"].as_f64().unwrap() > 10.0);
}

#[test]
fn h_const_routes_agree() {
    let cfg = write_config(&format!(r#"{{{STD_KERNEL}, "sigma": 0.5}}"#));
    let out = stdout_json(&run(&["h-const", "--config", cfg.path().to_str().unwrap()]));
    assert!(out["relative_gap"].as_f64().unwrap() < 1e-8);
}

#[test]
fn cover_counts_exact_tiling() {
    // u chosen so kappa u^(delta - 1/2) = 1/8: four panels tile [0,1]
    let u = (0.125f64).powf(1.0 / (0.1 - 0.5));
    let cfg = write_config(&format!(
        r#"{{"domain": [[0.0, 1.0]], "u": {u}, "kappa": 1.0, "delta": 0.1}}"#
    ));
    let out = stdout_json(&run(&["cover", "--config", cfg.path().to_str().unwrap()]));
    assert_eq!(out["inner_count"].as_u64(), Some(4));
    assert_eq!(out["outer_count"].as_u64(), Some(4));
}

#[test]
fn panels_vs_union_requires_standardized_kernel() {
    let cfg = write_config(
        r#"{"kernel": {"family": "sq_exp", "d": 1, "L": [[2.0]]},
            "domain": [[0.0, 1.0]], "sigma": 1.0, "target_prob": 1e-3,
            "mc": {"n_samples": 1000, "seed": 1}}"#,
    );
    let out = run(&["panels-vs-union", "--config", cfg.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn panels_vs_union_single_panel_ratio_is_one() {
    let cfg = write_config(&format!(
        r#"{{{STD_KERNEL}, "domain": [[0.0, 1.0]], "sigma": 1.0, "target_prob": 1e-4,
            "mc": {{"n_samples": 4000, "seed": 11, "workers": 2}}}}"#
    ));
    let out = stdout_json(&run(&[
        "panels-vs-union",
        "--config",
        cfg.path().to_str().unwrap(),
    ]));
    assert_eq!(out["panel_count"].as_u64(), Some(1));
    assert_eq!(out["ratio_sum_over_union"].as_f64(), Some(1.0));
}

#[test]
fn suprate_reports_fitted_constant() {
    let cfg = write_config(&format!(
        r#"{{{STD_KERNEL}, "domain": [[0.0, 1.0]], "sigma": 1.0,
            "u_levels": [3.0, 3.5],
            "mc": {{"n_samples": 20000, "seed": 9, "workers": 2, "grid_points_per_axis": 32}}}}"#
    ));
    let out = stdout_json(&run(&["suprate", "--config", cfg.path().to_str().unwrap()]));
    let g0 = out["levels"][0]["fitted_g"].as_f64().unwrap();
    let g1 = out["levels"][1]["fitted_g"].as_f64().unwrap();
    assert!(g0 > 0.4 && g0 < 1.2, "fitted G {g0}");
    assert!(g1 > 0.4 && g1 < 1.2, "fitted G {g1}");
}

#[test]
fn lognormal_reports_ratio_above_one_for_positive_correlation() {
    let cfg = write_config(
        r#"{"lognormal": {"mu": [0.0, 0.0], "cov": [[1.0, 0.5], [0.5, 1.0]]},
            "b": 115.98,
            "mc": {"n_samples": 40000, "seed": 13, "workers": 2}}"#,
    );
    let out = stdout_json(&run(&["lognormal", "--config", cfg.path().to_str().unwrap()]));
    let ratio = out["ratio_mc_over_approx"].as_f64().unwrap();
    assert!(ratio > 1.5 && ratio < 3.5, "ratio {ratio}");
}

#[test]
fn sample_dump_is_deterministic_csv() {
    let cfg = write_config(&format!(
        r#"{{{STD_KERNEL}, "domain": [[0.0, 1.0]],
            "mc": {{"seed": 3, "n_samples": 2, "grid_points_per_axis": 5}}}}"#
    ));
    let a = run(&["sample", "--config", cfg.path().to_str().unwrap()]);
    let b = run(&["sample", "--config", cfg.path().to_str().unwrap()]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("sample,t1,value"));
    assert_eq!(lines.count(), 10, "2 draws x 5 nodes");
}

#[test]
fn csv_format_rejected_for_json_reports() {
    let cfg = write_config(&format!("{{{STD_KERNEL}}}"));
    let out = run(&[
        "moments",
        "--config",
        cfg.path().to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn out_flag_writes_file() {
    let cfg = write_config(&format!("{{{STD_KERNEL}}}"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = run(&[
        "moments",
        "--config",
        cfg.path().to_str().unwrap(),
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!((v["gamma_det"].as_f64().unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn env_worker_default_preserves_results() {
    let cfg = write_config(&format!(
        r#"{{{STD_KERNEL}, "domain": [[0.0, 1.0]], "sigma": 1.0,
            "target_probs": [1e-3], "mc": {{"n_samples": 4000, "seed": 21}}}}"#
    ));
    let base = run(&["validate", "--config", cfg.path().to_str().unwrap()]);
    let enved = Command::new(env!("CARGO_BIN_EXE_grftails"))
        .args(["validate", "--config", cfg.path().to_str().unwrap()])
        .env("GRFTAILS_WORKERS", "8")
        .output()
        .unwrap();
    assert!(base.status.success() && enved.status.success());
    assert_eq!(base.stdout, enved.stdout);
}
