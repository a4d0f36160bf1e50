//! Scenario runner, sweeps and the command-line binary.

use std::fs;
use std::path::Path;
use std::process::Command;

use cumulant_cli::config::{RunConfig, SweepAxis, SweepSection};
use cumulant_cli::table::recompute_table;
use cumulant_cli::{run_scenario, run_sweep, Job, ModelKind};
use cumulant_core::eom::MomentODESystem;
use cumulant_core::solvers::Observable;

fn small_chain(dir: &Path, name: &str) -> RunConfig {
    let mut cfg = RunConfig { output: dir.join(name), orders: vec![1, 2], m: 50, ..Default::default() };
    cfg.chain.n = 3;
    cfg
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cumulant"))
}

#[test]
fn scenario_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_scenario(&small_chain(dir.path(), "run")).unwrap();
    for f in ["order_1.csv", "order_1.toml", "order_2.csv", "exact.csv", "exact.toml", "errors.csv", "report.txt", "run.toml"] {
        assert!(out.config.output.join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(out.config.output.join("order_1.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("time,s22[1].re,s22[1].im,sp[1].re"));
    assert_eq!(csv.lines().count(), 52);
    let table = fs::read_to_string(out.config.output.join("errors.csv")).unwrap();
    assert!(table.starts_with("order,d22_mean,dz_mean,dx_mean,truncated"));
    assert_eq!(table.lines().count(), 3);
    // sidecars carry the resolved config
    let side = RunConfig::load(&out.config.output.join("order_1.toml")).unwrap();
    assert_eq!(side, out.config);
}

#[test]
fn table_verb_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_scenario(&small_chain(dir.path(), "run")).unwrap();
    let written = fs::read_to_string(out.config.output.join("errors.csv")).unwrap();
    assert_eq!(recompute_table(&out.config.output).unwrap(), written);
}

#[test]
fn diverged_order_is_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig { model: ModelKind::Biprime, orders: vec![1, 2], m: 200, output: dir.path().join("u"), ..Default::default() };
    cfg.biprime.omega = 15;
    let out = run_scenario(&cfg).unwrap();
    let o2 = out.result(Job::Order(2)).unwrap();
    assert!(!o2.is_completed());
    assert!(matches!(out.bits_for(Job::Order(2)), Some(Err(_))));
    assert!(out.report.contains("FLAGGED"));
    assert!(out.errors_for(2).unwrap().iter().all(|e| e.truncated));
    // the truncated table still recomputes from disk
    assert_eq!(recompute_table(&cfg.output).unwrap(), fs::read_to_string(cfg.output.join("errors.csv")).unwrap());
}

#[test]
fn figure_sweeps_cover_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig { orders: (1..=5).collect(), m: 20, output: dir.path().join("fig3"), ..Default::default() };
    let spacings: Vec<f64> = (0..19).map(|i| 0.1 + 0.05 * i as f64).collect();
    cfg.sweep = Some(SweepSection { axis: SweepAxis::DOverLambda, values: spacings });
    let out = run_sweep(&cfg).unwrap();
    assert_eq!(out.cells.len(), 114);
    let rows = fs::read_to_string(cfg.output.join("sweep.csv")).unwrap().lines().count();
    let completed = out.cells.iter().filter(|c| c.result.trajectory.is_some()).count();
    assert_eq!(rows, 1 + completed * 21);

    cfg.output = dir.path().join("fig6");
    let drives: Vec<f64> = (1..=20).map(|i| 0.1 * i as f64).collect();
    cfg.sweep = Some(SweepSection { axis: SweepAxis::EtaOverGamma, values: drives });
    assert_eq!(run_sweep(&cfg).unwrap().cells.len(), 120);
}

#[test]
fn single_point_sweep_equals_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_chain(dir.path(), "single");
    let out = run_scenario(&cfg).unwrap();
    cfg.output = dir.path().join("sweep");
    cfg.sweep = Some(SweepSection { axis: SweepAxis::DOverLambda, values: vec![cfg.chain.d_over_lambda] });
    let sweep = run_sweep(&cfg).unwrap();
    for cell in &sweep.cells {
        let a = cell.result.trajectory.as_ref().unwrap().mean_series(Observable::S22);
        let b = out.result(cell.result.job).unwrap().trajectory.as_ref().unwrap().mean_series(Observable::S22);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = small_chain(dir.path(), "w1");
    a.workers = 1;
    let mut b = small_chain(dir.path(), "w3");
    b.workers = 3;
    run_scenario(&a).unwrap();
    run_scenario(&b).unwrap();
    for f in ["order_1.csv", "order_2.csv", "exact.csv", "errors.csv"] {
        assert_eq!(fs::read(a.output.join(f)).unwrap(), fs::read(b.output.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "model = \"chain\"\norders = [9]\n").unwrap();
    let st = bin().args(["run", "-c"]).arg(&bad).arg("-o").arg(dir.path().join("x")).output().unwrap();
    assert!(!st.status.success());
    assert!(String::from_utf8_lossy(&st.stderr).contains("order 9"));

    let missing = bin().args(["run", "-c", "/nonexistent/cfg.toml"]).output().unwrap();
    assert!(!missing.status.success());

    // a diverging order is report content, not an error
    let ugly = dir.path().join("ugly.toml");
    fs::write(&ugly, "model = \"biprime\"\norders = [2]\nm = 100\n[biprime]\nomega = 15\n").unwrap();
    let st = bin().args(["run", "-c"]).arg(&ugly).arg("-o").arg(dir.path().join("ugly")).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    assert!(String::from_utf8_lossy(&st.stdout).contains("diverged"));
}

#[test]
fn binary_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let st = bin()
        .args(["run", "--orders", "1", "-m", "30", "--rel-tol", "1e-7", "--workers", "1", "--no-exact", "-o"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(st.status.success());
    let cfg = RunConfig::load(&out.join("run.toml")).unwrap();
    assert_eq!((cfg.orders.clone(), cfg.m, cfg.integrator.rel_tol, cfg.exact), (vec![1], 30, 1e-7, false));
    assert!(!out.join("exact.csv").exists());
}

#[test]
fn derive_verb_emits_parseable_system() {
    let st = bin().args(["derive", "--order", "2"]).output().unwrap();
    assert!(st.status.success());
    let text = String::from_utf8(st.stdout).unwrap();
    let ms = MomentODESystem::from_text(&text).unwrap();
    assert_eq!(ms.order, 2);
    assert_eq!(ms.variables.len(), 105);
}
