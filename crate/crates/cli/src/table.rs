//! Recomputes the error table of a finished run from its files.

use std::path::Path;

use anyhow::{bail, Context, Result};

use cumulant_core::metrics::{error_summary, error_table_csv, ErrorSummary};

use crate::config::RunConfig;
use crate::output::{read_provenance, read_trajectory_csv, status_from_fields};
use crate::scenario::{error_columns, Job};

fn load(dir: &Path, job: Job) -> Result<cumulant_core::solvers::Trajectory> {
    let stem = job.file_stem();
    let prov = read_provenance(&dir.join(format!("{stem}.toml")))?;
    let scale = prov.get("time_scale").and_then(toml::Value::as_float).context("time_scale missing")?;
    read_trajectory_csv(&dir.join(format!("{stem}.csv")), scale, status_from_fields(&prov)?)
}

/// Error table CSV for every `order_<o>.csv` found next to `exact.csv`.
pub fn recompute_table(dir: &Path) -> Result<String> {
    let cfg = RunConfig::load(&dir.join("run.toml"))?;
    if !dir.join("exact.csv").exists() {
        bail!("{}: no exact.csv, nothing to compare against", dir.display());
    }
    let exact = load(dir, Job::Exact)?;
    let columns = error_columns(&cfg, exact.n_sites);
    let mut rows: Vec<(usize, Vec<ErrorSummary>)> = Vec::new();
    for &o in &cfg.orders {
        if !dir.join(format!("order_{o}.csv")).exists() {
            log::warn!("order {o} has no trajectory file");
            continue;
        }
        let t = load(dir, Job::Order(o))?;
        let row = columns
            .iter()
            .map(|&(obs, site)| error_summary(&t, &exact, obs, site, Some(o)))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((o, row));
    }
    Ok(error_table_csv(&rows))
}
