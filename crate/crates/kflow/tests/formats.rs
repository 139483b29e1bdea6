use std::process::Command;

use kahler_flow::config::{ExperimentSpec, ScenarioId, SCHEMA_VERSION};
use kahler_flow::io::{emit_plots_data, write_decay_csv, write_long_csv, RunSeries, Snapshot};
use kahler_flow::scenario::{flow_config, run_flow};
use kahler_flow_core::flow::{Background, FlowProblem};

const MINIMAL: &str = r#"
schema_version = 1
scenario = "ke-stability"
[geometry]
model = "sphere"
degree = 8
[seed]
modes = [{ l = 2, m = 0, amplitude = 1e-3 }]
[flow]
horizon = 0.3
gauge_every = 2
"#;

fn series(name: &str, n: usize) -> RunSeries {
    let v = |k: f64| (0..n).map(|i| k * (i as f64 + 1.0)).collect::<Vec<_>>();
    RunSeries {
        scenario: name.into(),
        t: v(0.1),
        h0: v(1.0),
        hk: v(2.0),
        htilde0: v(3.0),
        gauge_norm: v(4.0),
        c: v(5.0),
        raw_norm: v(6.0),
        raw_lambda1: v(7.0),
    }
}

#[test]
fn minimal_config_parses_and_roundtrips() {
    let spec = ExperimentSpec::from_toml(MINIMAL).unwrap();
    assert_eq!(spec.scenario, ScenarioId::KeStability);
    let again = ExperimentSpec::from_toml(&spec.to_toml().unwrap()).unwrap();
    assert_eq!(spec, again);
    for id in ScenarioId::ALL {
        let p = ExperimentSpec::preset(id);
        assert_eq!(ExperimentSpec::from_toml(&p.to_toml().unwrap()).unwrap(), p);
    }
}

#[test]
fn unknown_keys_are_rejected() {
    for (from, to) in [("degree = 8", "degree = 8\ncolor = 1"), ("horizon = 0.3", "horizon = 0.3\nstepper = \"rk4\""), ("schema_version = 1", "schema_version = 1\nextra = true")] {
        let text = MINIMAL.replace(from, to);
        assert!(ExperimentSpec::from_toml(&text).is_err(), "{to}");
    }
}

#[test]
fn schema_version_is_enforced() {
    let text = MINIMAL.replace("schema_version = 1", "schema_version = 2");
    let err = ExperimentSpec::from_toml(&text).unwrap_err().to_string();
    assert!(err.contains("schema_version"), "{err}");
    assert_eq!(SCHEMA_VERSION, 1);
}

#[test]
fn toric_geometry_needs_one_polygon_source() {
    let text = MINIMAL.replace("model = \"sphere\"\ndegree = 8", "model = \"toric\"\nresolution = 16");
    assert!(ExperimentSpec::from_toml(&text).is_err());
    let text = MINIMAL.replace("model = \"sphere\"\ndegree = 8", "model = \"toric\"\npolygon = \"square\"\nresolution = 16");
    assert!(ExperimentSpec::from_toml(&text).is_ok());
}

#[test]
fn empty_trajectory_gives_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.csv");
    write_decay_csv(&p, &series("empty", 0)).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "t,H0,Hk,Htilde0,gauge_norm,c_t\n");
}

#[test]
fn decay_csv_has_the_standard_columns() {
    let dir = tempfile::tempdir().unwrap();
    let files = emit_plots_data(dir.path(), &[&series("run", 3)]).unwrap();
    assert_eq!(files.len(), 4);
    let text = std::fs::read_to_string(dir.path().join("run_decay.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,H0,Hk,Htilde0,gauge_norm,c_t");
    assert_eq!(lines.count(), 3);
    let gauge = std::fs::read_to_string(dir.path().join("run_gauge.csv")).unwrap();
    assert!(gauge.starts_with("t,raw_norm,raw_lambda1,gauge_norm\n"));
}

#[test]
fn long_format_rows_are_keyed_by_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("long.csv");
    write_long_csv(&p, &[&series("a", 2), &series("b", 3)]).unwrap();
    let mut rdr = csv::Reader::from_path(&p).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["scenario", "t", "quantity", "value"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 8 * (2 + 3));
    assert_eq!(rows.iter().filter(|r| &r[0] == "a").count(), 16);
    let h0_b: Vec<f64> = rows.iter().filter(|r| &r[0] == "b" && &r[2] == "H0").map(|r| r[3].parse().unwrap()).collect();
    assert_eq!(h0_b, vec![1.0, 2.0, 3.0]);
}

fn run_minimal(dir: &std::path::Path) -> Vec<u8> {
    let spec = ExperimentSpec::from_toml(MINIMAL).unwrap();
    let geom = spec.geometry.build().unwrap();
    let problem = FlowProblem::new(&geom, Background::ke(&geom)).unwrap();
    let cfg = flow_config(&spec, &problem.background, spec.seed.potential(&geom).unwrap());
    let run = run_flow("minimal", &problem, &cfg, 1, 2).unwrap();
    emit_plots_data(dir, &[&run.series]).unwrap();
    let mut bytes = std::fs::read(dir.join("minimal_decay.csv")).unwrap();
    bytes.extend(std::fs::read(dir.join("bundle.csv")).unwrap());
    bytes
}

#[test]
fn identical_specs_give_identical_csv_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run_minimal(a.path()), run_minimal(b.path()));
}

#[test]
fn snapshot_roundtrip_restores_the_state() {
    let spec = ExperimentSpec::from_toml(MINIMAL).unwrap();
    let geom = spec.geometry.build().unwrap();
    let bg = Background::ke(&geom);
    let problem = FlowProblem::new(&geom, bg.clone()).unwrap();
    let state = problem.state(0.5, spec.seed.potential(&geom).unwrap(), 0.01).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.json");
    Snapshot::new(&geom, &bg, state.clone()).write(&p).unwrap();
    let back = Snapshot::read(&p).unwrap();
    let (g2, _) = back.restore().unwrap();
    assert_eq!(g2.id(), geom.id());
    assert_eq!(back.state.phi.coeffs, state.phi.coeffs);
    assert_eq!(back.state.c, state.c);
}

fn kflow() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kflow"))
}

#[test]
fn cli_writes_under_the_output_root_and_reports_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, MINIMAL).unwrap();
    let status = kflow().env("KFLOW_OUTPUT_ROOT", dir.path().join("out")).args(["flow", "run", "--config"]).arg(&cfg).output().unwrap().status;
    assert!(status.success());
    assert!(dir.path().join("out/ke-stability_decay.csv").exists());
    assert!(dir.path().join("out/final.json").exists());

    std::fs::write(&cfg, MINIMAL.replace("horizon = 0.3", "horizon = 0.3\nunknown = 1")).unwrap();
    let out = kflow().args(["flow", "run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown"));

    let out = kflow().args(["scenario", "no-such-scenario"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_spectrum_prints_the_first_eigenvalues() {
    let out = kflow().args(["spectrum", "--degree", "8", "--count", "4"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let first: Vec<f64> = text.lines().map(|l| l.split_whitespace().next().unwrap().parse().unwrap()).collect();
    assert_eq!(first.len(), 4);
    assert!((first[0] - 1.0).abs() < 1e-10 && (first[3] - 3.0).abs() < 1e-10);
}
