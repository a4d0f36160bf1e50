//! Parameter sweeps over the chain: one cell per (axis value, order) plus
//! the exact reference per axis value, merged into a long-format CSV.
//!
//! `sweep.csv` columns: `<axis>,order,time,mean_s22`, where `order` is an
//! integer or `exact`. `cells.csv` lists the status of every cell.

use std::fs;

use anyhow::{bail, Context, Result};

use cumulant_core::parallel;
use cumulant_core::solvers::Observable;

use crate::config::{RunConfig, SweepAxis};
use crate::output::write_sidecar;
use crate::scenario::{jobs, prepare, run_job, Job, JobResult};

#[derive(Debug, Clone)]
pub struct Cell {
    pub value: f64,
    pub result: JobResult,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub axis: SweepAxis,
    pub cells: Vec<Cell>,
}

fn with_axis(cfg: &RunConfig, axis: SweepAxis, value: f64) -> RunConfig {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::DOverLambda => c.chain.d_over_lambda = value,
        SweepAxis::EtaOverGamma => c.chain.eta_over_gamma = value,
    }
    c.sweep = None;
    c
}

/// Runs every cell. Cells are independent and may run concurrently; the
/// merged output follows axis order, then job order.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepOutcome> {
    let mut cfg = cfg.clone();
    cfg.resolve()?;
    cfg.validate()?;
    let Some(sweep) = cfg.sweep.clone() else { bail!("config has no [sweep] section") };
    let per_value: Vec<RunConfig> = sweep.values.iter().map(|&v| with_axis(&cfg, sweep.axis, v)).collect();
    for c in &per_value {
        c.validate().with_context(|| format!("sweep point {}", c.chain.d_over_lambda))?;
    }
    let preps = per_value.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, Job)> =
        (0..per_value.len()).flat_map(|i| jobs(&per_value[i]).into_iter().map(move |j| (i, j))).collect();
    let results = parallel::map(&tasks, cfg.workers, |&(i, job)| run_job(&per_value[i], &preps[i], job));
    let cells = tasks
        .iter()
        .zip(results)
        .map(|(&(i, _), result)| Cell { value: sweep.values[i], result })
        .collect();

    let out = SweepOutcome { axis: sweep.axis, cells };
    fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    write_long_csv(&cfg, &out)?;
    let mut prov = toml::Table::new();
    prov.insert("file".into(), "sweep.csv".into());
    prov.insert("cells".into(), (out.cells.len() as i64).into());
    prov.insert("crate_version".into(), env!("CARGO_PKG_VERSION").into());
    write_sidecar(&cfg.output.join("sweep.toml"), &cfg, prov)?;
    Ok(out)
}

fn write_long_csv(cfg: &RunConfig, out: &SweepOutcome) -> Result<()> {
    let path = cfg.output.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record([out.axis.label(), "order", "time", "mean_s22"])?;
    for cell in &out.cells {
        let Some(t) = &cell.result.trajectory else { continue };
        let mean = t.mean_series(Observable::S22);
        let label = cell.result.job.label();
        for (x, v) in t.grid.points.iter().zip(&mean) {
            w.write_record([format!("{:e}", cell.value), label.clone(), format!("{x:e}"), format!("{v:e}")])?;
        }
    }
    w.flush()?;

    let path = cfg.output.join("cells.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record([out.axis.label(), "order", "status", "variables", "wall_s"])?;
    for cell in &out.cells {
        let r = &cell.result;
        let status = match (&r.trajectory, &r.error) {
            (Some(t), _) => t.status.to_string(),
            (None, Some(e)) => format!("error: {e}"),
            (None, None) => "not run".into(),
        };
        let vars = r.variables.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([format!("{:e}", cell.value), r.job.label(), status, vars, format!("{:.3}", r.wall_secs)])?;
    }
    w.flush()?;
    Ok(())
}
