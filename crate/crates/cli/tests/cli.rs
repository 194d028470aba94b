use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dhym::torus::{write_potential, Potential, TorusGrid};
use serde_json::Value;
use tempfile::TempDir;

fn dhym(args: &[&str]) -> Output {
    dhym_in(args, None)
}

fn dhym_in(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dhym"));
    cmd.args(args).env_remove("DHYM_OUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("DHYM_OUT_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout_json(out: &Output) -> Value {
    assert_eq!(code(out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn snapshot(dir: &Path, name: &str, grid: &TorusGrid<f64>, phi: &Potential<f64>) -> PathBuf {
    let path = dir.join(name);
    let mut buf = Vec::new();
    write_potential(&mut buf, grid, phi).unwrap();
    fs::write(&path, buf).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const FIXED_POINT: &str = r#"
schema = "dhym.experiment/1"
[grid]
n = 2
points = 8
[alpha]
diagonal = [3.0, 3.0]
[flow]
eps = 0.01
t_end = 1.0
"#;

const BUMP: &str = r#"
schema = "dhym.experiment/1"
[grid]
n = 2
points = 8
[alpha]
diagonal = [3.0, 3.0]
[phi0]
kind = "bump"
center = [1.0, 2.0, 3.0, 0.5]
concentration = 1.0
amplitude = 0.3
[flow]
t_end = 5.0
nodes = 4
monitor_every = 10
snapshot_times = [0.0, 1.0]
"#;

#[test]
fn ops_eval_prints_the_twisted_operator() {
    let out = dhym(&["ops", "eval", "--lambda", "2,3", "--eps", "0.5"]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "1.1\n");
}

#[test]
fn ops_json_outputs() {
    let phase = stdout_json(&dhym(&["ops", "phase", "--lambda", "2,3", "--theta", "1.0", "--big-theta", "2.0"]));
    assert!((phase["q"].as_f64().unwrap() - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    assert_eq!(phase["in_cone"], Value::Bool(true));
    let grad = stdout_json(&dhym(&["ops", "grad", "--lambda", "2,3"]));
    assert_eq!(grad.as_array().unwrap().len(), 2);
    let hess = stdout_json(&dhym(&["ops", "hess", "--lambda", "2,3,4"]));
    assert_eq!(hess.as_array().unwrap().len(), 3);
}

#[test]
fn exit_codes_separate_bad_input_from_numerical_failure() {
    assert_eq!(code(&dhym(&["ops", "eval"])), 1);
    assert_eq!(code(&dhym(&["ops", "eval", "--lambda", "2,3", "--eps", "-1"])), 1);
    assert_eq!(code(&dhym(&["no-such-command"])), 1);
    // Q > pi: sin Q < 0
    let out = dhym(&["ops", "eval", "--lambda", "0.1,0.1,-5"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("singular phase"));
    assert_eq!(code(&dhym(&["--help"])), 0);
}

#[test]
fn flow_fixed_point_converges_at_once() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "fixedpoint.toml", FIXED_POINT);
    let out_dir = tmp.path().join("out");
    let summary = stdout_json(&dhym(&["flow", "--config", s(&cfg), "--out", s(&out_dir)]));
    assert_eq!(summary["converged"], Value::Bool(true));
    assert_eq!(summary["samples"], 1);
    let trace = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2);
    assert!(out_dir.join("stationary.csv").exists());
    let on_disk: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("flow.json")).unwrap()).unwrap();
    assert_eq!(on_disk, summary);
}

#[test]
fn flow_outputs_are_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "bump.toml", BUMP);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&dhym(&["flow", "--config", s(&cfg), "--out", s(&a)])), 0);
    assert_eq!(code(&dhym(&["flow", "--config", s(&cfg), "--out", s(&b)])), 0);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.iter().any(|n| n == "snapshot_001.csv"));
    for name in names {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn output_directory_precedence() {
    let tmp = TempDir::new().unwrap();
    let env_dir = tmp.path().join("from_env");
    let cfg = write(tmp.path(), "fp.toml", FIXED_POINT);
    assert_eq!(code(&dhym_in(&["flow", "--config", s(&cfg)], Some(&env_dir))), 0);
    assert!(env_dir.join("flow.json").exists());

    let cfg_dir = tmp.path().join("from_config");
    let text = format!("output_dir = {:?}\n{FIXED_POINT}", s(&cfg_dir));
    let cfg = write(tmp.path(), "fp_dir.toml", &text);
    assert_eq!(code(&dhym_in(&["flow", "--config", s(&cfg)], Some(&env_dir))), 0);
    assert!(cfg_dir.join("flow.json").exists());

    let flag_dir = tmp.path().join("from_flag");
    assert_eq!(code(&dhym_in(&["flow", "--config", s(&cfg), "--out", s(&flag_dir)], Some(&env_dir))), 0);
    assert!(flag_dir.join("flow.json").exists());
}

#[test]
fn config_errors_name_the_offending_key() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "typo.toml", &format!("{FIXED_POINT}dtt = 0.1\n"));
    let out = dhym(&["flow", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("flow.dtt"), "{}", stderr(&out));

    let cfg = write(tmp.path(), "schema.toml", &FIXED_POINT.replace("experiment/1", "experiment/9"));
    let out = dhym(&["flow", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("schema"));

    let cfg = write(tmp.path(), "shape.toml", &FIXED_POINT.replace("[3.0, 3.0]", "[3.0]"));
    let out = dhym(&["flow", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("alpha.diagonal"));

    let out = dhym(&["flow", "--config", s(&tmp.path().join("missing.toml"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn json_config_matches_toml() {
    let tmp = TempDir::new().unwrap();
    let json = r#"{"schema": "dhym.experiment/1", "grid": {"n": 2, "points": 8},
        "alpha": {"diagonal": [3.0, 3.0]},
        "phi0": {"kind": "bump", "center": [1.0, 2.0, 3.0, 0.5], "concentration": 1.0, "amplitude": 0.3},
        "flow": {"t_end": 5.0, "nodes": 4, "monitor_every": 10, "snapshot_times": [0.0, 1.0]}}"#;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cj = write(tmp.path(), "bump.json", json);
    let ct = write(tmp.path(), "bump.toml", BUMP);
    assert_eq!(code(&dhym(&["flow", "--config", s(&cj), "--out", s(&a)])), 0);
    assert_eq!(code(&dhym(&["flow", "--config", s(&ct), "--out", s(&b)])), 0);
    assert_eq!(fs::read(a.join("trace.csv")).unwrap(), fs::read(b.join("trace.csv")).unwrap());
}

#[test]
fn functional_record_on_a_flow_snapshot() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "bump.toml", BUMP);
    let out_dir = tmp.path().join("flow");
    assert_eq!(code(&dhym(&["flow", "--config", s(&cfg), "--out", s(&out_dir)])), 0);
    let snap = out_dir.join("snapshot_000.csv");
    let rec = stdout_json(&dhym(&["functional", "--input", s(&snap), "--alpha", "3", "--bigC", "2.0"]));
    let (jv, j0v, theta0) = (rec["J"].as_f64().unwrap(), rec["J0"].as_f64().unwrap(), rec["theta0"].as_f64().unwrap());
    assert!((jv - theta0.sin() * j0v).abs() <= 1e-8 * (1.0 + jv.abs()));
    assert_eq!(rec["margins"]["h"]["inside"], Value::Bool(true));
    for key in ["Jeps", "ImZ", "coercivity_gap"] {
        assert!(rec[key].is_f64(), "{key}");
    }
}

#[test]
fn geodesic_between_constants_has_the_exact_length() {
    let tmp = TempDir::new().unwrap();
    let grid = TorusGrid::standard(1, 16).unwrap();
    let a = snapshot(tmp.path(), "zero.csv", &grid, &Potential::zeros(&grid));
    let b = snapshot(tmp.path(), "top.csv", &grid, &Potential::constant(&grid, 0.3));
    let out_dir = tmp.path().join("geo");
    let args = ["geodesic", "--phi0", s(&a), "--phi1", s(&b), "--alpha", "1.5", "--p", "1", "--slices", "8"];
    let rep = stdout_json(&dhym(&[&args[..], &["--out", s(&out_dir)]].concat()));
    let want = 0.3 * grid.volume() * (1.0f64 + 1.5 * 1.5).sqrt();
    for len in rep["lengths"].as_array().unwrap() {
        assert!((len.as_f64().unwrap() - want).abs() <= 1e-12 * want);
    }
    let csv = fs::read_to_string(out_dir.join("energy.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 8);
    assert!(out_dir.join("geodesic.json").exists());
}

#[test]
fn regularize_glues_within_the_cone_and_reports_gap_failures() {
    let tmp = TempDir::new().unwrap();
    let grid = TorusGrid::standard(2, 16).unwrap();
    let input = snapshot(tmp.path(), "zero.csv", &grid, &Potential::zeros(&grid));
    let layout = write(
        tmp.path(),
        "layout.toml",
        r#"
schema = "dhym.layout/1"
slabs = 2
overlap = 3
[[patches]]
terms = [{ amplitude = 0.3, wave = [1, 0, 0, 0], phase = -1.5707963267948966 }]
[[patches]]
terms = [{ amplitude = -0.3, wave = [1, 0, 0, 0], phase = -1.5707963267948966 }]
"#,
    );
    let out_dir = tmp.path().join("reg");
    let base = ["regularize", "--input", s(&input), "--alpha", "3", "--layout", s(&layout)];
    let rep = stdout_json(&dhym(&[&base[..], &["--eta", "0.02", "--out", s(&out_dir)]].concat()));
    let glue = &rep["glue"];
    assert!(glue["glued_margin"].as_f64().unwrap() >= glue["min_patch_margin"].as_f64().unwrap() - 1e-10);
    assert!(out_dir.join("regularized.csv").exists());

    let out = dhym(&[&base[..], &["--eta", "0.2", "--out", s(&out_dir)]].concat());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("gluing gap"));

    let out = dhym(&[&base[..], &["--radius", "1.0", "--out", s(&out_dir)]].concat());
    assert_eq!(code(&out), 1);
}

#[test]
fn verify_eigenops_suite_has_no_violations() {
    let tmp = TempDir::new().unwrap();
    let run = || dhym(&["verify", "--suite", "eigenops", "--seed", "7", "--out", s(tmp.path())]);
    let first = run();
    let rep = stdout_json(&first);
    assert_eq!(rep["violations"], 0);
    assert_eq!(rep["passed"], Value::Bool(true));
    assert!(rep["results"].as_array().unwrap().iter().all(|c| c["measured"].is_f64()));
    assert_eq!(first.stdout, run().stdout);
    assert_eq!(fs::read(tmp.path().join("verify.json")).unwrap(), first.stdout);
}

#[test]
fn verify_all_suites_pass() {
    let rep = stdout_json(&dhym(&["verify", "--seed", "11"]));
    assert_eq!(rep["suites"].as_array().unwrap().len(), 5);
    let failed: Vec<&Value> = rep["results"].as_array().unwrap().iter().filter(|c| c["passed"] != true).collect();
    assert!(failed.is_empty(), "{failed:?}");
}
