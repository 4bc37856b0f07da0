use std::path::{Path, PathBuf};
use std::process::Command;

use ahx_cli::read_csv;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

struct Run {
    code: i32,
    out: PathBuf,
    stderr: String,
    hash: String,
}

fn ahx(dir: &Path, name: &str, cmd: &str, cfg: &Value, extra: &[&str]) -> Run {
    let cfg_path = dir.join(format!("{name}.json"));
    let bytes = serde_json::to_vec_pretty(cfg).unwrap();
    std::fs::write(&cfg_path, &bytes).unwrap();
    let out = dir.join(name);
    let o = Command::new(env!("CARGO_BIN_EXE_ahx"))
        .arg(cmd)
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    let hash = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    Run { code: o.status.code().unwrap_or(-1), out, stderr: String::from_utf8_lossy(&o.stderr).into(), hash }
}

fn json_file(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn trace_half_plane_ends_at_y_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"metric": {"family": "half-plane"}, "tol": 1e-12, "trace": {"y": 0.0, "eta": 1.0}});
    let r = ahx(dir.path(), "t", "trace", &cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let csv = read_csv(&r.out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.config_hash.as_deref(), Some(r.hash.as_str()));
    let y = csv.floats("y").unwrap();
    assert!((y.last().unwrap() - 2.0).abs() < 1e-8);
    assert!(y[0].abs() < 1e-12);
    let rho = csv.floats("rho").unwrap();
    // Semicircle of radius 1 centred at y = 1.
    for (yy, rr) in y.iter().zip(&rho) {
        assert!(((yy - 1.0).powi(2) + rr * rr - 1.0).abs() < 1e-8);
    }
    let summary = json_file(&r.out.join("trace.json"));
    assert_eq!(summary["config_sha256"], r.hash);
    assert!((summary["renormalized_length"].as_f64().unwrap() - 2.0 * 2f64.ln()).abs() < 1e-8);
    let svg = std::fs::read_to_string(r.out.join("trajectory.svg")).unwrap();
    assert!(svg.contains(&r.hash));
}

#[test]
fn negative_delta_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "metric": {"family": "half-plane"},
        "recover": {"y0": 0.0, "directions": [1.0, -1.0], "deltas": [0.1, -0.05, 0.025]}
    });
    let r = ahx(dir.path(), "bad", "recover", &cfg, &[]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert_eq!(r.stderr.lines().count(), 1);
}

#[test]
fn config_problems_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = json!({"metric": {"family": "sphere"}, "trace": {"y": 0.0, "eta": 1.0}});
    assert_eq!(ahx(dir.path(), "a", "trace", &unknown, &[]).code, 3);
    let missing = json!({"metric": {"family": "half-plane"}});
    assert_eq!(ahx(dir.path(), "b", "scatter", &missing, &[]).code, 3);
    let tol = json!({"metric": {"family": "half-plane"}, "tol": 0.0, "trace": {"y": 0.0, "eta": 1.0}});
    assert_eq!(ahx(dir.path(), "c", "trace", &tol, &[]).code, 3);
    let weight = json!({
        "metric": {"family": "half-plane"},
        "xray": {"field": {"center": [0.5, 0.0], "width": 0.2, "weight": 0}, "ys": [0.0], "etas": [1.0]}
    });
    assert_eq!(ahx(dir.path(), "d", "xray", &weight, &[]).code, 3);
}

#[test]
fn long_geodesic_with_small_budget_is_trapped() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"metric": {"family": "half-plane"}, "t_max": 5.0, "trace": {"y": 0.0, "eta": 0.01}});
    let r = ahx(dir.path(), "trap", "trace", &cfg, &[]);
    assert_eq!(r.code, 2, "{}", r.stderr);
}

#[test]
fn disc_distances_match_the_chord_formula() {
    let dir = tempfile::tempdir().unwrap();
    let thetas = [0.5f64, 1.0, 2.0, 3.0];
    let pairs: Vec<Value> = thetas.iter().map(|t| json!([0.3, 0.3 + t])).collect();
    let cfg = json!({"metric": {"family": "disc-normal"}, "distance": {"pairs": pairs}});
    let r = ahx(dir.path(), "d", "distance", &cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let csv = read_csv(&r.out.join("distance.csv")).unwrap();
    let d = csv.floats("d_r").unwrap();
    for (t, dr) in thetas.iter().zip(&d) {
        let want = 2.0 * (2.0 * (t / 2.0).sin()).ln();
        assert!((dr - want).abs() < 1e-6, "theta {t}: {dr} vs {want}");
    }
    assert!(r.out.join("distance.svg").exists());
}

#[test]
fn half_plane_lengths_and_partial_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "metric": {"family": "half-plane"},
        "tol": 1e-12,
        "length": {"ys": [0.0], "etas": [0.5, 2.0, 0.0], "method": "both"}
    });
    let r = ahx(dir.path(), "l", "length", &cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let csv = read_csv(&r.out.join("length.csv")).unwrap();
    let st = csv.column("status").unwrap();
    let l = csv.floats("length").unwrap();
    let m = csv.floats("length_mellin").unwrap();
    for (k, eta) in [0.5f64, 2.0].iter().enumerate() {
        assert_eq!(csv.rows[k][st], "ok");
        let want = 2.0 * (2.0 / eta).ln();
        assert!((l[k] - want).abs() < 1e-6);
        assert!((m[k] - want).abs() < 1e-6);
    }
    // η = 0 is the vertical ray, which never comes back.
    assert!(csv.rows[2][st].starts_with("trapped"), "{}", csv.rows[2][st]);
    assert!(l[2].is_nan());
}

#[test]
fn scatter_is_deterministic_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "metric": {"family": "perturbed", "params": {"a_cos": [0.0, 0.1], "b_cos": [0.05]}},
        "scatter": {"ys": [0.0, 1.0, 2.0], "etas": [0.8, 1.5], "jacobian": true}
    });
    let a = ahx(dir.path(), "s1", "scatter", &cfg, &["--jobs", "1"]);
    let b = ahx(dir.path(), "s4", "scatter", &cfg, &["--jobs", "4"]);
    assert_eq!(a.code, 0, "{}", a.stderr);
    assert_eq!(b.code, 0, "{}", b.stderr);
    let fa = std::fs::read(a.out.join("scatter.csv")).unwrap();
    let fb = std::fs::read(b.out.join("scatter.csv")).unwrap();
    assert_eq!(fa, fb);
    let csv = read_csv(&a.out.join("scatter.csv")).unwrap();
    for d in csv.floats("det").unwrap() {
        assert!((d - 1.0).abs() < 1e-6);
    }
}

#[test]
fn xray_of_a_positive_bump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "metric": {"family": "half-plane"},
        "xray": {"field": {"center": [0.5, 0.0], "width": 0.2}, "ys": [-1.0, 0.0], "etas": [0.5, 1.0]}
    });
    let r = ahx(dir.path(), "x", "xray", &cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let csv = read_csv(&r.out.join("xray.csv")).unwrap();
    assert_eq!(csv.rows.len(), 4);
    assert!(csv.floats("value").unwrap().iter().all(|v| *v > 0.0));
}

#[test]
fn diagnose_half_plane() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"metric": {"family": "half-plane"}, "diagnose": {"ys": [0.0], "etas": [0.5, 1.0, 2.0]}});
    let r = ahx(dir.path(), "g", "diagnose", &cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = json_file(&r.out.join("diagnose.json"));
    assert_eq!(v["conjugate_count"], 0);
    assert!((v["min_angle_deg"].as_f64().unwrap() - 90.0).abs() < 1e-6);
    assert_eq!(v["failures"], 0);
}

#[test]
fn recover_perturbed_jet() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "metric": {"family": "perturbed", "params": {"a_cos": [0.0, 0.1], "b_cos": [0.05]}},
        "recover": {"y0": 0.0, "directions": [1.0, -1.0], "fit": true}
    });
    let r = ahx(dir.path(), "r", "recover", &cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = json_file(&r.out.join("jet.json"));
    let h0 = v["asymptotic"]["h0"][0][0].as_f64().unwrap();
    let d1 = v["asymptotic"]["drho_h"][0][0].as_f64().unwrap();
    assert!((h0 - 1.0).abs() < 1e-4);
    assert!((d1 - 0.2).abs() < 5e-3);
    let f1 = v["fit"]["drho_h"][0][0].as_f64().unwrap();
    let f2 = v["fit"]["d2rho_h"][0][0].as_f64().unwrap();
    assert!((f1 - 0.2).abs() < 1e-3);
    assert!((f2 - (0.04 + 0.2)).abs() < 5e-2);
    let samples = read_csv(&r.out.join("samples.csv")).unwrap();
    assert_eq!(samples.rows.len(), 14);
}
