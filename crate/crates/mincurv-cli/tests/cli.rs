//! End-to-end runs of the binary: artifact layout, determinism, exit codes
//! and the verification pass over a produced bundle.

use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mincurv")
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn radial_run_verify_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("radial.json");
    write(
        &cfg,
        r#"{ "n": 2, "k": 1, "rhs": { "kind": "soliton", "c": 2.0 },
            "r_max": 1000.0, "tol": 1e-10, "seed": 7 }"#,
    );
    for run in ["run1", "run2"] {
        let status = Command::new(bin())
            .args(["radial", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(run))
            .arg("--quiet")
            .status()
            .unwrap();
        assert!(status.success());
    }
    // identical configs (and seed) produce byte-identical artifacts
    for name in ["profile.csv", "asymptote.json", "manifest.json", "run.json"] {
        let a = fs::read(dir.path().join("run1").join(name)).unwrap();
        let b = fs::read(dir.path().join("run2").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    // asymptote carries the expected constant for (n,k,C) = (2,1,2)
    let asym: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run1/asymptote.json")).unwrap())
            .unwrap();
    let z_inf = asym["z_inf"].as_f64().unwrap();
    assert!((z_inf - 0.125).abs() < 0.01 * 0.125, "z_inf = {z_inf}");

    // verify the bundle
    let vcfg = dir.path().join("verify.json");
    write(
        &vcfg,
        &format!(
            r#"{{ "bundle": "{}" }}"#,
            dir.path().join("run1").display()
        ),
    );
    let status = Command::new(bin())
        .args(["verify", "--config"])
        .arg(&vcfg)
        .arg("--out")
        .arg(dir.path().join("ver"))
        .arg("--quiet")
        .status()
        .unwrap();
    assert!(status.success());
    let rep: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("ver/verification.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(rep["all_passed"], serde_json::Value::Bool(true));
}

#[test]
fn dirichlet_primal_solve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("dirichlet.json");
    write(
        &cfg,
        r#"{ "n": 2, "k": 1, "form": "primal",
            "rhs": { "kind": "constant", "value": 2.0 },
            "domain": { "kind": "ball", "radius": 1.0 },
            "boundary": { "kind": "hyperboloid", "alpha": 1.0 },
            "grid": { "m": 33 }, "tol": 1e-10 }"#,
    );
    let out = dir.path().join("out");
    let status = Command::new(bin())
        .args(["dirichlet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("--quiet")
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let hist = report["residual_history"].as_array().unwrap();
    assert!(hist.last().unwrap().as_f64().unwrap() <= 1e-10);
    // wall time never enters the serialized report (byte determinism)
    assert!(report.get("wall_time_s").is_none());
    // field CSV has the header and data rows
    let csv = fs::read_to_string(out.join("field.csv")).unwrap();
    assert!(csv.starts_with("x1,x2,u,du1,du2\n"));
    assert!(csv.lines().count() > 100);
}

#[test]
fn schema_violation_exits_2_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    write(
        &cfg,
        r#"{ "n": 3, "k": 4, "rhs": { "kind": "soliton", "c": 2.0 }, "r_max": 10.0 }"#,
    );
    let out = dir.path().join("out");
    let status = Command::new(bin())
        .args(["radial", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let produced = fs::read_dir(&out).map(|d| d.count()).unwrap_or(0);
    assert_eq!(produced, 0, "no artifacts on schema violations");
}

#[test]
fn missing_bundle_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("verify.json");
    write(
        &cfg,
        &format!(
            r#"{{ "bundle": "{}" }}"#,
            dir.path().join("nothing-here").display()
        ),
    );
    let status = Command::new(bin())
        .args(["verify", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn soliton_pipeline_bundle_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("soliton.json");
    write(
        &cfg,
        r#"{ "mode": "theorem3", "n": 2, "k": 1, "c": 2.0,
            "stages": 2, "grid_m": 49, "stage_h": 0.1,
            "watch_radius": 0.8, "watch_m": 17, "m_tilt": 0.1,
            "tol": 1e-9 }"#,
    );
    let out = dir.path().join("out");
    let status = Command::new(bin())
        .args(["soliton", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("--quiet")
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("stage_00.csv").exists());
    assert!(out.join("final_dual.csv").exists());
    assert!(out.join("convergence.json").exists());

    let vcfg = dir.path().join("verify.json");
    write(
        &vcfg,
        &format!(r#"{{ "bundle": "{}" }}"#, out.display()),
    );
    let status = Command::new(bin())
        .args(["verify", "--config"])
        .arg(&vcfg)
        .arg("--out")
        .arg(dir.path().join("ver"))
        .arg("--quiet")
        .status()
        .unwrap();
    assert!(status.success());
    let rep: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("ver/verification.json")).unwrap(),
    )
    .unwrap();
    let names: Vec<&str> = rep["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"flow_residual"));
    assert!(names.contains(&"support_band"));
    assert!(names.contains(&"curvature_bound"));
    for c in rep["checks"].as_array().unwrap() {
        assert_ne!(c["outcome"], serde_json::json!("Failed"), "{c}");
    }
}
