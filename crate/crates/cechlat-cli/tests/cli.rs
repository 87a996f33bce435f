use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cechlat")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn meet_of_opposite_rays_is_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["site", "--config", fixture("site_meet_rays.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("site.json")).unwrap()).unwrap();
    assert_eq!(v["bounded"], true);
}

#[test]
fn fuzzy_leq_reports_a_radius() {
    let o = run(&["site", "--config", fixture("site_fuzzy_leq.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["leq"], true);
    assert!(v["certificate"]["radius"].is_string());
}

#[test]
fn thicken_accepts_rational_radius() {
    let o = run(&["site", "--config", fixture("site_thicken.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("\"thicken\""));
}

#[test]
fn nerve_betti_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["nerve", "--config", fixture("nerve_3cone.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("betti.csv")).unwrap();
    assert_eq!(csv, "degree,betti\n0,1\n1,1\n");
    assert!(dir.path().join("nerve.json").exists());

    let o = run(&["nerve", "--config", fixture("nerve_k4.json").to_str().unwrap()]);
    assert_eq!(stdout(&o), "degree,betti\n0,1\n1,3\n");
}

#[test]
fn empty_cover_is_a_usage_error() {
    let o = run(&["nerve", "--config", fixture("nerve_empty.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ERROR"));
}

#[test]
fn missing_config_and_unknown_fields() {
    assert_eq!(run(&["nerve"]).status.code(), Some(2));
    assert_eq!(run(&["nerve", "--config", "/nonexistent/cover.json"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"cover": {"kind": "orthants", "n": 2}, "colour": 1}"#).unwrap();
    assert_eq!(run(&["nerve", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn product_state_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["invariant", "--config", fixture("run_product.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(v["hall"]["sigma"], 0.0);
    assert_eq!(v["orientation_antisymmetric"], true);
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn interacting_report_within_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["invariant", "--config", fixture("run_xxz.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(v["residuals"]["preservation"].as_f64().unwrap() < 1e-8);
    assert!(v["residuals"]["mc"].as_f64().unwrap() < 1e-9);
    let log = stderr(&o);
    let first = log.lines().next().unwrap();
    assert!(chrono::DateTime::parse_from_rfc3339(first.split(' ').next().unwrap()).is_ok(), "{first}");
}

#[test]
fn fermion_table_flips_sign_with_mass() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["invariant", "--config", fixture("run_qwz.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.iter().map(|r| r[1]).collect::<Vec<_>>(), vec!["-1", "1", "0"]);
    let im_neg: f64 = rows[0][4].parse().unwrap();
    let im_pos: f64 = rows[1][4].parse().unwrap();
    assert!(im_neg > 0.0 && im_pos < 0.0);
    assert!((im_neg + im_pos).abs() < 1e-9);
}

#[test]
fn gapless_mass_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gapless.json");
    std::fs::write(&cfg, r#"{"model": {"kind": "qwz", "l": 4, "masses": [2.0], "grid": 12}}"#).unwrap();
    let o = run(&["invariant", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gap_check_failure_prints_measured_gap() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["invariant", "--config", fixture("run_gap_failure.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("measured gap 1.85"), "{}", stderr(&o));
}

#[test]
fn oversized_lattice_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("big.json");
    std::fs::write(
        &cfg,
        r#"{"lattice": {"shape": [4, 4]}, "model": {"kind": "zfield", "hz": -1.0},
            "cover": {"kind": "planar_cones", "directions": [[1, 0], [-1, 1], [-1, -1]]}}"#,
    )
    .unwrap();
    let o = run(&["invariant", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn graph_cover_runs_subset_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("k4.json");
    std::fs::write(
        &cfg,
        r#"{"dimension": 3, "lattice": {"shape": [2, 2, 2]}, "model": {"kind": "zfield", "hz": -1.0},
            "filter": {"gap": 1.0}, "epsilon": "1",
            "cover": {"kind": "graph", "vertices": [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]],
                      "edges": [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]}}"#,
    )
    .unwrap();
    let o = run(&["invariant", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(v["values"].as_object().unwrap().len(), 3);
}

#[test]
fn verify_suites_pass() {
    for suite in ["brick", "mc"] {
        let o = run(&["verify", "--suite", suite, "--seed", "3"]);
        assert_eq!(o.status.code(), Some(0), "{suite}: {}", stderr(&o));
        assert!(stdout(&o).contains("0 failed"));
    }
    let o = run(&["verify", "--suite", "mc", "--seed", "3"]);
    assert!(stdout(&o).contains("max_residual"));
    assert_eq!(run(&["verify", "--suite", "nope"]).status.code(), Some(2));
}
