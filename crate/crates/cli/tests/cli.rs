use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn boilerctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boilerctl")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("small.toml");
    std::fs::write(
        &cfg,
        format!(
            "seed = 4\nout_dir = {:?}\n[plant]\nsteps = 2000\n[loop]\nhorizon = 40\nwarmup = 20\n\
             [compensation]\nsweep_sizes = [1, 5, 50]\n",
            dir.join("run").to_str().unwrap()
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn pipeline_writes_artifacts_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let c = cfg.to_str().unwrap();
    let run = tmp.path().join("run");

    ok(&boilerctl(&["--config", c, "generate"]));
    let data = std::fs::read_to_string(run.join("data.csv")).unwrap();
    assert_eq!(data.lines().count(), 2001);

    let table = ok(&boilerctl(&["--config", c, "train", "--sweep-layouts"]));
    for t in ["A ", "B ", "C(2)"] {
        assert!(table.contains(t), "{table}");
    }
    let acc = json(run.join("accuracy.json"));
    assert_eq!(acc["reports"].as_array().unwrap().len(), 3);

    ok(&boilerctl(&["--config", c, "sweep-compensation"]));
    let comp = json(run.join("compensation.json"));
    assert_eq!(comp["summary"]["sizes"], serde_json::json!([1, 5, 50]));

    ok(&boilerctl(&["--config", c, "simulate", "--horizon", "30"]));
    let rep = json(run.join("loop_report.json"));
    assert_eq!(rep["aggregates"]["steps"], 30);
    assert!(rep["deltas"]["temp_std_reduction_pct"].is_f64());
    let timing = json(run.join("loop_report.timing.json"));
    assert!(timing.get("/aggregates/max_solve_time_s").is_some());
    let header = std::fs::read_to_string(run.join("loop.csv")).unwrap();
    assert!(!header.lines().next().unwrap().contains("solve_time"));

    let manifest = json(run.join("manifest.json"));
    let cmds = manifest["commands"].as_object().unwrap();
    for name in ["generate", "train", "sweep-compensation", "simulate"] {
        assert!(cmds.contains_key(name), "{name}");
    }
    assert_eq!(cmds["simulate"]["config"]["loop"]["horizon"], 30);
    assert_eq!(cmds["generate"]["seed"], 4);
    let sha = cmds["generate"]["files"]["data.csv"]["sha256"].as_str().unwrap();
    assert_eq!(sha.len(), 64);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let c = cfg.to_str().unwrap();
    let run = tmp.path().join("run");
    ok(&boilerctl(&["--config", c, "generate", "--steps", "50"]));
    let a = std::fs::read(run.join("data.csv")).unwrap();
    ok(&boilerctl(&["--config", c, "--seed", "5", "generate", "--steps", "50"]));
    let b = std::fs::read(run.join("data.csv")).unwrap();
    assert_ne!(a, b);
    assert_eq!(json(run.join("manifest.json"))["commands"]["generate"]["seed"], 5);
}

#[test]
fn identity_qp_solves_to_origin() {
    let tmp = tempfile::tempdir().unwrap();
    let qp = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/identity.qp");
    let out = tmp.path().join("qp");
    ok(&boilerctl(&["--out", out.to_str().unwrap(), "qp-solve", qp.to_str().unwrap()]));
    let s = json(out.join("solution.json"));
    assert_eq!(s["status"], "Optimal");
    for v in s["x"].as_array().unwrap() {
        assert!(v.as_f64().unwrap().abs() <= 1e-8);
    }
    assert!(s["objective"].as_f64().unwrap().abs() <= 1e-12);
    assert!(s.get("solve_time_s").is_none());
    assert!(out.join("solution.timing.json").exists());
}

#[test]
fn infeasible_qp_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let qp = tmp.path().join("bad.qp");
    std::fs::write(&qp, "n 1\nm_ineq 0\nm_eq 1\nH\n1\nf 0\nc 0\nlower -1\nupper 1\neq 1 5\n").unwrap();
    let out = boilerctl(&["--out", tmp.path().join("o").to_str().unwrap(), "qp-solve", qp.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_config_key_exits_2_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[objective]\nlambda_tmp = 1.0\n").unwrap();
    let out = boilerctl(&["--config", cfg.to_str().unwrap(), "generate"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("objective") && err.contains("lambda_tmp"), "{err}");
}

#[test]
fn invalid_value_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[svr]\nepsilon = -1.0\n").unwrap();
    let out = boilerctl(&["--config", cfg.to_str().unwrap(), "generate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_or_malformed_inputs_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("o");
    let out = boilerctl(&["--out", o.to_str().unwrap(), "train", "--data", "/nonexistent/data.csv"]);
    assert_eq!(out.status.code(), Some(3));
    let qp = tmp.path().join("garbled.qp");
    std::fs::write(&qp, "n two\n").unwrap();
    let out = boilerctl(&["--out", o.to_str().unwrap(), "qp-solve", qp.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}
