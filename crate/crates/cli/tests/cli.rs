use std::path::Path;
use std::process::{Command, Output};

fn tvneumann(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvneumann"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &str = r#"
name = "small"
solver = "mincut"
[domain]
nx = 16
stencil = "N8"
[boundary]
default = 0.0
pieces = [
  { kind = "side", side = "bottom", from = 0.0, to = 1.0, value = -0.5 },
  { kind = "side", side = "top", from = 0.0, to = 1.0, value = 0.5 },
]
"#;

#[test]
fn lists_the_builtins() {
    let out = tvneumann(&["list"]);
    assert!(out.status.success());
    let names: Vec<String> = String::from_utf8(out.stdout).unwrap().lines().map(String::from).collect();
    assert_eq!(names.len(), 9);
    assert!(names.contains(&"ex-weighted-disk".to_string()));
}

#[test]
fn solves_a_builtin_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = tvneumann(&["solve", "--scenario", "ex-square-a05", "--out", out_dir]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("ex-square-a05.json"));
    assert_eq!(report["diagnostics"]["metrics"]["total"].as_f64(), Some(0.0));
    assert_eq!(report["expected_check"]["passed"].as_bool(), Some(true));
    let mask = std::fs::read(dir.path().join("ex-square-a05_minimal_e1.pgm")).unwrap();
    assert!(mask.starts_with(b"P5\n64 64\n255\n"));
    assert!(mask[13..].iter().all(|&b| b == 0));
}

#[test]
fn runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = tvneumann(&["solve", "--scenario", "ex-disk-three", "--out", dir.path().to_str().unwrap(), "--seed", "7"]);
        assert_eq!(out.status.code(), Some(0));
    }
    for file in ["ex-disk-three.json", "ex-disk-three_minimal_e1.pgm", "ex-disk-three_maximal_e2.pgm"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }
}

#[test]
fn malformed_toml_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "name = \"bad\"\nsolver = [").unwrap();
    let out = tvneumann(&["solve", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));
    assert_eq!(tvneumann(&["solve", "--scenario", "no-such-scenario"]).status.code(), Some(1));
}

#[test]
fn expected_mismatch_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.toml");
    std::fs::write(&path, format!("{SMALL}[expected]\ntotal = {{ value = -1.0, tol = 1e-3 }}\n")).unwrap();
    let out = tvneumann(&["solve", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["expected_check"]["passed"].as_bool(), Some(false));
}

#[test]
fn unbalanced_data_respect_the_tolerance_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("skew.toml");
    let text = SMALL.replace("value = 0.5 }", "value = 0.45 }").replace("default = 0.0", "default = 0.0\nrebalance = false");
    std::fs::write(&path, text).unwrap();
    let p = path.to_str().unwrap();
    assert_eq!(tvneumann(&["solve", "--scenario", p]).status.code(), Some(1));
    assert_eq!(tvneumann(&["solve", "--scenario", p, "--tol-override", "0.1"]).status.code(), Some(0));
}

#[test]
fn batch_mode_runs_each_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = tvneumann(&[
        "solve", "--scenario", "ex-square-a05", "--scenario", "ex-square-a1", "--jobs", "2", "--out", out_dir,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("ex-square-a05.json").is_file());
    assert!(dir.path().join("ex-square-a1.json").is_file());
}

#[test]
fn mesh_info_reports_unit_mass() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.toml");
    std::fs::write(&path, SMALL.replace("nx = 16", "nx = 64")).unwrap();
    let out = tvneumann(&["mesh-info", "--scenario", path.to_str().unwrap()]);
    assert!(out.status.success());
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["cells"].as_u64(), Some(4096));
    assert!((stats["total_mu"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn lambda_of_half_data_is_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    let out = tvneumann(&["lambda", "--scenario", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let lambda = report["diagnostics"]["metrics"]["lambda"].as_f64().unwrap();
    assert!((lambda - 2.0).abs() < 0.1, "{lambda}");
    assert_eq!(report["diagnostics"]["classification"].as_str(), Some("zero-is-minimal"));
}

#[test]
fn relax_writes_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    let out = tvneumann(&["relax", "--scenario", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("small_field.csv")).unwrap();
    assert!(csv.starts_with("cell,x,y,u\n"));
    assert_eq!(csv.lines().count(), 257);
}

#[test]
fn verify_passes_on_a_short_run() {
    let out = tvneumann(&["verify", "--instances", "20", "--seed", "3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}
