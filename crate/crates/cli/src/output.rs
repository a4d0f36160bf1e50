//! Trajectory CSV files and their metadata sidecars.
//!
//! Trajectory CSV columns: `time`, then for every site `m` the pairs
//! `s22[m].re, s22[m].im, sp[m].re, sp[m].im, sm[m].re, sm[m].im`.
//! `time` is the model's grid variable (`Γt` for the chain, `s` for the
//! annealer). Values use the shortest round-trip notation; points after a
//! divergence are `NaN`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use cumulant_core::solvers::{series_key, Status, TimeGrid, Trajectory};
use cumulant_core::C64;

use crate::config::RunConfig;

const BASES: [&str; 3] = ["s22", "sp", "sm"];

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["time".to_string()];
    for m in 1..=traj.n_sites {
        for b in BASES {
            let key = series_key(b, m);
            header.push(format!("{key}.re"));
            header.push(format!("{key}.im"));
        }
    }
    w.write_record(&header)?;
    let columns: Vec<&Vec<C64>> = (1..=traj.n_sites)
        .flat_map(|m| BASES.map(|b| &traj.series[&series_key(b, m)]))
        .collect();
    for (i, t) in traj.grid.points.iter().enumerate() {
        let mut row = Vec::with_capacity(header.len());
        row.push(format!("{t:e}"));
        for c in &columns {
            row.push(format!("{:e}", c[i].re));
            row.push(format!("{:e}", c[i].im));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path, time_scale: f64, status: Status) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("time") || header.len() % 2 != 1 {
        bail!("{}: not a trajectory file (bad header)", path.display());
    }
    let keys: Vec<String> = header[1..]
        .chunks(2)
        .map(|pair| pair[0].trim_end_matches(".re").to_string())
        .collect();
    let mut points = Vec::new();
    let mut series: BTreeMap<String, Vec<C64>> = keys.iter().map(|k| (k.clone(), Vec::new())).collect();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .context("short row")?
                .parse::<f64>()
                .with_context(|| format!("{}: row {} column {}", path.display(), line + 2, i + 1))
        };
        points.push(num(0)?);
        for (j, k) in keys.iter().enumerate() {
            let v = C64::new(num(1 + 2 * j)?, num(2 + 2 * j)?);
            series.get_mut(k).expect("key from header").push(v);
        }
    }
    let n_sites = keys.len() / BASES.len();
    let grid = TimeGrid { points, time_scale };
    Trajectory::from_series(grid, n_sites, series, status).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

/// Writes the full resolved configuration plus a run record.
pub fn write_sidecar(path: &Path, cfg: &RunConfig, provenance: toml::Table) -> Result<()> {
    let mut with = cfg.clone();
    with.provenance = Some(provenance);
    fs::write(path, with.to_toml()?).with_context(|| format!("writing {}", path.display()))
}

pub fn read_provenance(path: &Path) -> Result<toml::Table> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    match table.get("provenance") {
        Some(toml::Value::Table(t)) => Ok(t.clone()),
        _ => bail!("{}: no [provenance] table", path.display()),
    }
}

pub fn status_fields(status: &Status) -> toml::Table {
    let mut t = toml::Table::new();
    match status {
        Status::Completed => {
            t.insert("status".into(), "completed".into());
        }
        Status::Diverged { at } => {
            t.insert("status".into(), "diverged".into());
            t.insert("status_at".into(), (*at).into());
        }
        Status::SolverFailure { at, reason } => {
            t.insert("status".into(), "solver_failure".into());
            t.insert("status_at".into(), (*at).into());
            t.insert("status_reason".into(), reason.clone().into());
        }
    }
    t
}

pub fn status_from_fields(t: &toml::Table) -> Result<Status> {
    let at = || t.get("status_at").and_then(toml::Value::as_float).context("status_at missing");
    Ok(match t.get("status").and_then(toml::Value::as_str) {
        Some("completed") => Status::Completed,
        Some("diverged") => Status::Diverged { at: at()? },
        Some("solver_failure") => Status::SolverFailure {
            at: at()?,
            reason: t.get("status_reason").and_then(toml::Value::as_str).unwrap_or_default().to_string(),
        },
        other => bail!("unknown status {other:?}"),
    })
}
