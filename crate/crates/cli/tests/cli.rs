use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use odewave_core::config::{Profile, RunConfig, Scenario};
use odewave_core::verify::planted_root_plant;
use odewave_core::PlantConfig;
use serde_json::Value;
use tempfile::TempDir;

fn odewave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odewave")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, name: &str, cfg: &impl serde::Serialize) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn scalar_run(scenario: Scenario) -> RunConfig {
    let mut cfg = RunConfig::new(PlantConfig::worked_scalar(), scenario);
    cfg.grid = 50;
    cfg.horizon = 2.0;
    cfg.record_every = 5;
    cfg
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn design_of_worked_scalar_gives_unit_gain() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &scalar_run(Scenario::OutputFeedback));
    let out_dir = tmp.path().join("out");
    let out = odewave(&["design", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let gains: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("gains.json")).unwrap()).unwrap();
    let k = gains["k"][0].as_f64().unwrap();
    assert!((k + 1.0).abs() < 1e-12, "K = {k}");
    assert!(out_dir.join("assumptions.json").exists());
}

#[test]
fn malformed_config_exits_2_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let mut v = serde_json::to_value(scalar_run(Scenario::OutputFeedback)).unwrap();
    v["plant"]["alpha"] = Value::from(-1.0);
    let cfg = write_config(tmp.path(), "bad.json", &v);
    let out_dir = tmp.path().join("out");
    for cmd in ["design", "kernels", "simulate"] {
        let out = odewave(&[cmd, "--config", s(&cfg), "--out", s(&out_dir)]);
        assert_eq!(code(&out), 2, "{cmd}");
        assert!(!out_dir.exists(), "{cmd} wrote output for a malformed config");
    }
}

#[test]
fn unknown_field_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let mut v = serde_json::to_value(scalar_run(Scenario::OutputFeedback)).unwrap();
    v["grdi"] = Value::from(10);
    let cfg = write_config(tmp.path(), "bad.json", &v);
    assert_eq!(code(&odewave(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))])), 2);
}

#[test]
fn planted_root_exits_3_and_names_the_eigenvalue() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &RunConfig::new(planted_root_plant().unwrap(), Scenario::OutputFeedback));
    let out_dir = tmp.path().join("out");
    let out = odewave(&["design", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("eigenvalue"));
    let report: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("assumptions.json")).unwrap()).unwrap();
    assert_eq!(report["spectrum_a1_ok"], Value::Bool(false));
    assert!(!out_dir.join("gains.json").exists());

    let sim_dir = tmp.path().join("sim");
    assert_eq!(code(&odewave(&["simulate", "--config", s(&cfg), "--out", s(&sim_dir)])), 3);
}

#[test]
fn zero_initial_data_gives_zero_trace() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &scalar_run(Scenario::OutputFeedback));
    let out_dir = tmp.path().join("out");
    assert_eq!(code(&odewave(&["simulate", "--config", s(&cfg), "--out", s(&out_dir)])), 0);
    let mut rdr = csv::Reader::from_path(out_dir.join("trace.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        for (h, v) in headers.iter().zip(rec.iter()).skip(1) {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{h}");
        }
        rows += 1;
    }
    assert!(rows > 1);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let mut run = scalar_run(Scenario::OutputFeedback);
    run.initial.x = Some(vec![0.5]);
    run.initial.w = Profile::RandomModes { amplitude: 1.0, modes: 6 };
    run.seed = 7;
    let cfg = write_config(tmp.path(), "c.json", &run);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(code(&odewave(&["simulate", "--config", s(&cfg), "--out", s(d)])), 0);
    }
    for f in ["trace.csv", "report.json", "gains.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = tmp.path().join("c");
    assert_eq!(code(&odewave(&["simulate", "--config", s(&cfg), "--out", s(&c), "--seed", "8"])), 0);
    assert_ne!(fs::read(a.join("trace.csv")).unwrap(), fs::read(c.join("trace.csv")).unwrap());
}

#[test]
fn overrides_are_revalidated() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &scalar_run(Scenario::OutputFeedback));
    let out = odewave(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("o")), "--horizon", "-1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn verify_rejects_cfl_violation() {
    let out = odewave(&["verify", "--dt-factor", "1.5"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn kernels_writes_csv_and_residuals() {
    let tmp = TempDir::new().unwrap();
    let mut run = RunConfig::new(PlantConfig::demo(), Scenario::OutputFeedback);
    run.grid = 100;
    let cfg = write_config(tmp.path(), "c.json", &run);
    let out_dir = tmp.path().join("out");
    assert_eq!(code(&odewave(&["kernels", "--config", s(&cfg), "--out", s(&out_dir)])), 0);
    let csv = fs::read_to_string(out_dir.join("kernels.csv")).unwrap();
    assert_eq!(csv.lines().count(), 102);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("kernels.json")).unwrap()).unwrap();
    assert_eq!(summary["grid"], Value::from(100));
    assert!(summary["residual"].is_object());
}

fn summary_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn single_point_sweep_matches_simulate() {
    let tmp = TempDir::new().unwrap();
    let mut run = scalar_run(Scenario::OutputFeedback);
    run.initial.x = Some(vec![0.5]);
    run.initial.w = Profile::Cosine { amplitude: 1.0, mode: 1.0 };
    let sweep = serde_json::json!({ "base": run });
    let sweep_cfg = write_config(tmp.path(), "sweep.json", &sweep);
    let run_cfg = write_config(tmp.path(), "run.json", &run);
    let (sw, sim) = (tmp.path().join("sweep"), tmp.path().join("sim"));
    assert_eq!(code(&odewave(&["sweep", "--config", s(&sweep_cfg), "--out", s(&sw), "--jobs", "1"])), 0);
    assert_eq!(code(&odewave(&["simulate", "--config", s(&run_cfg), "--out", s(&sim)])), 0);
    assert_eq!(summary_rows(&sw.join("summary.csv")).len(), 1);
    assert_eq!(
        fs::read(sw.join("run_0000").join("trace.csv")).unwrap(),
        fs::read(sim.join("trace.csv")).unwrap()
    );
}

#[test]
fn sweep_flags_infeasible_points_and_keeps_going() {
    let tmp = TempDir::new().unwrap();
    let base = RunConfig {
        grid: 40,
        horizon: 1.0,
        ..RunConfig::new(planted_root_plant().unwrap(), Scenario::OutputFeedback)
    };
    // alpha = 1 is the planted root; alpha = 2 moves the spectrum away from it.
    let sweep = serde_json::json!({ "base": base, "alpha": [1.0, 2.0] });
    let cfg = write_config(tmp.path(), "sweep.json", &sweep);
    let out_dir = tmp.path().join("out");
    assert_eq!(code(&odewave(&["sweep", "--config", s(&cfg), "--out", s(&out_dir), "--jobs", "2"])), 0);
    let rows = summary_rows(&out_dir.join("summary.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][0], "0");
    assert_eq!(&rows[0][8], "3");
    assert_ne!(&rows[0][7], "ok");
    assert_eq!(&rows[1][7], "ok");
}

#[test]
fn estimator_gain_sweep_tracks_disturbance() {
    let tmp = TempDir::new().unwrap();
    let mut v = serde_json::to_value(scalar_run(Scenario::OutputFeedback)).unwrap();
    v["grid"] = Value::from(100);
    v["horizon"] = Value::from(30.0);
    v["initial"]["x"] = serde_json::json!([0.5]);
    v["disturbance"]["d"] = serde_json::json!({ "kind": "sinusoid", "a": 1.0, "omega": 2.0 });
    let sweep = serde_json::json!({ "base": v, "k_est": [0.5, 1.0, 2.0] });
    let cfg = write_config(tmp.path(), "sweep.json", &sweep);
    let out_dir = tmp.path().join("out");
    assert_eq!(code(&odewave(&["sweep", "--config", s(&cfg), "--out", s(&out_dir)])), 0);
    let rows = summary_rows(&out_dir.join("summary.csv"));
    assert_eq!(rows.len(), 3);
    for r in &rows {
        let ratio: f64 = r[12].parse().unwrap();
        assert!(ratio <= 0.1, "k_est {}: tracking ratio {ratio}", &r[3]);
    }
}

#[test]
fn blow_up_exits_4_and_keeps_partial_trace() {
    let tmp = TempDir::new().unwrap();
    let mut v = serde_json::to_value(scalar_run(Scenario::StateFeedback)).unwrap();
    v["gains"] = serde_json::json!({ "k": [60.0] });
    v["horizon"] = Value::from(20.0);
    v["initial"]["x"] = serde_json::json!([1.0]);
    let cfg = write_config(tmp.path(), "c.json", &v);
    let out_dir = tmp.path().join("out");
    let out = odewave(&["simulate", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("blow-up at t ="));
    assert!(summary_rows(&out_dir.join("trace.csv")).len() > 1);
}
