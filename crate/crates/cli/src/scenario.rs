//! Single scenario: every requested order plus the exact reference,
//! trajectory files, error table and run report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};

use cumulant_core::eom::{initial_moments, ProductState, SystemSpec};
use cumulant_core::metrics::{error_summary, error_table_csv, read_bits, BitReadout, ErrorSummary};
use cumulant_core::models::{build_biprime_system, build_chain_system};
use cumulant_core::parallel;
use cumulant_core::solvers::{
    density_matrix, integrate_moments, solve_master_equation, solve_schrodinger, Observable, SiteMode, Status, TimeGrid,
    Trajectory,
};

use crate::cache::load_or_derive;
use crate::config::{ModelKind, RunConfig};
use crate::output::{status_fields, write_sidecar, write_trajectory_csv};

/// System, initial state and output grid of a resolved configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub sys: SystemSpec,
    pub state: ProductState,
    pub grid: TimeGrid,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    Ok(match cfg.model {
        ModelKind::Chain => {
            let p = cfg.chain.params();
            Prepared {
                sys: build_chain_system(&p)?,
                state: ProductState::all_ground(p.n),
                grid: TimeGrid::uniform(p.t_total, cfg.m, 1.0 / p.gamma),
            }
        }
        ModelKind::Biprime => {
            let p = cfg.biprime.params()?;
            Prepared {
                sys: build_biprime_system(&p)?,
                // ground state of −ξΣσˣ
                state: ProductState::all_plus(p.n_qubits()),
                grid: TimeGrid::uniform(1.0, cfg.m, p.t_total),
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Job {
    Order(usize),
    Exact,
}

impl Job {
    pub fn label(self) -> String {
        match self {
            Job::Order(o) => o.to_string(),
            Job::Exact => "exact".to_string(),
        }
    }

    pub fn file_stem(self) -> String {
        match self {
            Job::Order(o) => format!("order_{o}"),
            Job::Exact => "exact".to_string(),
        }
    }
}

/// Outcome of one order or of the reference run. `error` holds failures
/// that prevented any trajectory (e.g. a derivation error).
#[derive(Debug, Clone)]
pub struct JobResult {
    pub job: Job,
    pub trajectory: Option<Trajectory>,
    pub error: Option<String>,
    pub variables: Option<usize>,
    pub cache_hit: bool,
    pub wall_secs: f64,
}

impl JobResult {
    pub fn status(&self) -> Option<&Status> {
        self.trajectory.as_ref().map(|t| &t.status)
    }

    pub fn is_completed(&self) -> bool {
        self.status().is_some_and(Status::is_completed)
    }

    fn status_text(&self) -> String {
        match (&self.trajectory, &self.error) {
            (Some(t), _) => t.status.to_string(),
            (None, Some(e)) => format!("error: {e}"),
            (None, None) => "not run".to_string(),
        }
    }
}

pub fn run_job(cfg: &RunConfig, prep: &Prepared, job: Job) -> JobResult {
    let start = Instant::now();
    let mut out = JobResult { job, trajectory: None, error: None, variables: None, cache_hit: false, wall_secs: 0.0 };
    let result: Result<Trajectory> = (|| match job {
        Job::Order(order) => {
            let cache = cfg.cache_dir();
            let (ms, hit) = load_or_derive(&prep.sys, order, Some(cache.as_path()))?;
            out.cache_hit = hit;
            out.variables = Some(ms.variables.len());
            let init = initial_moments(&prep.state, &ms.variables)?;
            Ok(integrate_moments(&ms, &init, &prep.grid, &cfg.integrator.to_core()?)?)
        }
        Job::Exact => {
            let rcfg = cfg.reference.0.to_core()?;
            Ok(match cfg.model {
                ModelKind::Chain => solve_master_equation(&prep.sys, &density_matrix(&prep.state), &prep.grid, &rcfg)?,
                ModelKind::Biprime => solve_schrodinger(&prep.sys, &prep.state.state_vector(), &prep.grid, &rcfg)?,
            })
        }
    })();
    match result {
        Ok(t) => out.trajectory = Some(t),
        Err(e) => {
            log::error!("{} run failed: {e:#}", job.label());
            out.error = Some(format!("{e:#}"));
        }
    }
    out.wall_secs = start.elapsed().as_secs_f64();
    out
}

pub fn jobs(cfg: &RunConfig) -> Vec<Job> {
    let mut jobs: Vec<Job> = cfg.orders.iter().map(|&o| Job::Order(o)).collect();
    if cfg.exact {
        jobs.push(Job::Exact);
    }
    jobs
}

/// Error measures tabulated per order: site means for the chain, every
/// site for the annealer.
pub fn error_columns(cfg: &RunConfig, n_sites: usize) -> Vec<(Observable, SiteMode)> {
    match cfg.model {
        ModelKind::Chain => Observable::ALL.iter().map(|&o| (o, SiteMode::Mean)).collect(),
        ModelKind::Biprime => Observable::ALL
            .iter()
            .flat_map(|&o| (1..=n_sites).map(move |m| (o, SiteMode::Site(m))))
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub config: RunConfig,
    pub results: Vec<JobResult>,
    pub errors: Vec<(usize, Vec<ErrorSummary>)>,
    /// Bit read-out per job label (annealer only).
    pub bits: Vec<(String, Result<BitReadout, String>)>,
    pub report: String,
    pub files: Vec<PathBuf>,
}

impl ScenarioOutcome {
    pub fn result(&self, job: Job) -> Option<&JobResult> {
        self.results.iter().find(|r| r.job == job)
    }

    pub fn errors_for(&self, order: usize) -> Option<&[ErrorSummary]> {
        self.errors.iter().find(|(o, _)| *o == order).map(|(_, s)| s.as_slice())
    }

    pub fn bits_for(&self, job: Job) -> Option<&Result<BitReadout, String>> {
        self.bits.iter().find(|(l, _)| *l == job.label()).map(|(_, b)| b)
    }
}

pub fn compute_errors(cfg: &RunConfig, results: &[JobResult]) -> Vec<(usize, Vec<ErrorSummary>)> {
    let Some(exact) = results.iter().find(|r| r.job == Job::Exact).and_then(|r| r.trajectory.as_ref()) else {
        return Vec::new();
    };
    let columns = error_columns(cfg, exact.n_sites);
    let mut rows = Vec::new();
    for r in results {
        let (Job::Order(o), Some(t)) = (r.job, &r.trajectory) else { continue };
        let row: Result<Vec<_>, _> =
            columns.iter().map(|&(obs, site)| error_summary(t, exact, obs, site, Some(o))).collect();
        match row {
            Ok(row) => rows.push((o, row)),
            Err(e) => log::error!("order {o}: {e}"),
        }
    }
    rows
}

fn compute_bits(cfg: &RunConfig, results: &[JobResult]) -> Result<Vec<(String, Result<BitReadout, String>)>> {
    if cfg.model != ModelKind::Biprime {
        return Ok(Vec::new());
    }
    let p = cfg.biprime.params()?;
    Ok(results
        .iter()
        .map(|r| {
            let b = match &r.trajectory {
                Some(t) => read_bits(t, p.k, p.l, p.omega).map_err(|e| e.to_string()),
                None => Err(r.status_text()),
            };
            (r.job.label(), b)
        })
        .collect())
}

fn provenance(cfg: &RunConfig, r: &JobResult, grid: &TimeGrid) -> toml::Table {
    let mut t = toml::Table::new();
    t.insert("file".into(), format!("{}.csv", r.job.file_stem()).into());
    t.insert("run".into(), r.job.label().into());
    t.insert("crate_version".into(), env!("CARGO_PKG_VERSION").into());
    t.insert("grid_variable".into(), if cfg.model == ModelKind::Chain { "gamma_t" } else { "s" }.into());
    t.insert("time_scale".into(), grid.time_scale.into());
    t.insert("points".into(), (grid.len() as i64).into());
    t.insert("wall_time_s".into(), r.wall_secs.into());
    if let Some(v) = r.variables {
        t.insert("variables".into(), (v as i64).into());
        t.insert("cache_hit".into(), r.cache_hit.into());
    }
    if let Some(tr) = &r.trajectory {
        t.extend(status_fields(&tr.status));
        let d = &tr.diagnostics;
        t.insert("rhs_evals".into(), (d.rhs_evals as i64).into());
        t.insert("accepted_steps".into(), (d.accepted_steps as i64).into());
        t.insert("rejected_steps".into(), (d.rejected_steps as i64).into());
        t.insert("max_abs_observable".into(), d.max_abs_observable.into());
        if let Some(drift) = d.max_norm_drift {
            t.insert("max_norm_drift".into(), drift.into());
        }
        if let Some(v) = &d.physicality {
            t.insert("nonphysical_at".into(), v.at.into());
            t.insert("nonphysical_observable".into(), v.observable.clone().into());
            t.insert("nonphysical_value".into(), v.value.into());
        }
    }
    if let Some(e) = &r.error {
        t.insert("error".into(), e.clone().into());
    }
    t
}

fn site_label(site: SiteMode) -> String {
    match site {
        SiteMode::Mean => "mean".into(),
        SiteMode::Site(m) => m.to_string(),
    }
}

pub fn render_report(cfg: &RunConfig, out: &ScenarioOutcome) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "cumulant run report");
    match cfg.model {
        ModelKind::Chain => {
            let c = &cfg.chain;
            let _ = writeln!(
                s,
                "model: chain N={} d/λ={} η/Γ={} ω₀={} ΓT={} Γt_off={}",
                c.n, c.d_over_lambda, c.eta_over_gamma, c.omega0, c.t_total, c.t_off
            );
            let _ = writeln!(s, "grid: M={} over Γt ∈ [0, {}]", cfg.m, c.t_total);
        }
        ModelKind::Biprime => {
            let b = &cfg.biprime;
            let _ = writeln!(
                s,
                "model: biprime ω={} k={} l={} ξ={} T={} ħΩ={}",
                b.omega,
                b.k.unwrap_or_default(),
                b.l.unwrap_or_default(),
                b.xi,
                b.t_total,
                b.hbar_omega
            );
            let _ = writeln!(s, "grid: M={} over s ∈ [0, 1]", cfg.m);
        }
    }
    let _ = writeln!(
        s,
        "integrator: rel_tol={:e} abs_tol={:e} divergence_bound={:e}",
        cfg.integrator.rel_tol, cfg.integrator.abs_tol, cfg.integrator.divergence_bound
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<7}{:>10}  {:<36}{:>12}{:>10}", "run", "variables", "status", "max|obs|", "wall[s]");
    for r in &out.results {
        let vars = r.variables.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        let max = r.trajectory.as_ref().map(|t| format!("{:.3e}", t.diagnostics.max_abs_observable)).unwrap_or_default();
        let flag = if r.is_completed() { "" } else { "  FLAGGED" };
        let _ = writeln!(s, "{:<7}{:>10}  {:<36}{:>12}{:>10.2}{flag}", r.job.label(), vars, r.status_text(), max, r.wall_secs);
    }
    let nonphysical: Vec<String> = out
        .results
        .iter()
        .filter_map(|r| {
            let v = r.trajectory.as_ref()?.diagnostics.physicality.as_ref()?;
            Some(format!("  {}: {} = {:.4} at {:.4}", r.job.label(), v.observable, v.value, v.at))
        })
        .collect();
    if !nonphysical.is_empty() {
        let _ = writeln!(s, "\nnonphysical values (first occurrence):");
        for line in nonphysical {
            let _ = writeln!(s, "{line}");
        }
    }
    if !out.errors.is_empty() {
        let _ = writeln!(s, "\nerror sums (plain sum of squared differences over the grid):");
        let bound = cfg.integrator.divergence_bound;
        for (o, row) in &out.errors {
            let _ = write!(s, "  o={o}:");
            for e in row {
                let _ = write!(s, " Δ{}[{}]={:.3e}", e.observable.label(), site_label(e.site), e.total);
            }
            if row.iter().any(|e| e.truncated) {
                let sat: Vec<String> = row.iter().map(|e| format!("{:.3e}", e.saturated(bound))).collect();
                let _ = write!(s, "  (valid prefix only; saturated: {})", sat.join(" "));
            }
            let _ = writeln!(s);
        }
    }
    if !out.bits.is_empty() {
        let _ = writeln!(s, "\nbit read-out:");
        for (label, b) in &out.bits {
            match b {
                Ok(b) => {
                    let bits: Vec<String> = b.bits.iter().map(u8::to_string).collect();
                    let exps: Vec<String> = b.expectations.iter().map(|v| format!("{v:.3}")).collect();
                    let _ = writeln!(
                        s,
                        "  {label}: bits [{}] a={} b={} a·b={} ⟨σ²²⟩=[{}] {}",
                        bits.join(","),
                        b.a,
                        b.b,
                        b.product,
                        exps.join(", "),
                        if b.valid { "valid" } else { "INVALID" }
                    );
                }
                Err(e) => {
                    let _ = writeln!(s, "  {label}: refused ({e})");
                }
            }
        }
    }
    s
}

/// Runs every job of `cfg` and writes all artifacts into `cfg.output`.
/// Scientific failures end up in the report; only configuration and I/O
/// problems return an error.
pub fn run_scenario(cfg: &RunConfig) -> Result<ScenarioOutcome> {
    let mut cfg = cfg.clone();
    cfg.resolve()?;
    cfg.validate()?;
    let prep = prepare(&cfg)?;
    let dir = cfg.output.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating output dir {}", dir.display()))?;

    let results = parallel::map(&jobs(&cfg), cfg.workers, |&job| run_job(&cfg, &prep, job));
    let errors = compute_errors(&cfg, &results);
    let bits = compute_bits(&cfg, &results)?;
    let mut out = ScenarioOutcome { config: cfg.clone(), results, errors, bits, report: String::new(), files: Vec::new() };

    for r in &out.results {
        let Some(t) = &r.trajectory else { continue };
        let csv = dir.join(format!("{}.csv", r.job.file_stem()));
        write_trajectory_csv(&csv, t)?;
        write_sidecar(&dir.join(format!("{}.toml", r.job.file_stem())), &cfg, provenance(&cfg, r, &prep.grid))?;
        out.files.push(csv);
    }
    if !out.errors.is_empty() {
        let path = dir.join("errors.csv");
        write_file(&path, &error_table_csv(&out.errors))?;
        out.files.push(path);
    }
    out.report = render_report(&cfg, &out);
    write_file(&dir.join("report.txt"), &out.report)?;
    let mut summary = toml::Table::new();
    summary.insert("crate_version".into(), env!("CARGO_PKG_VERSION").into());
    let flagged: Vec<toml::Value> =
        out.results.iter().filter(|r| !r.is_completed()).map(|r| r.job.label().into()).collect();
    summary.insert("flagged".into(), flagged.into());
    write_sidecar(&dir.join("run.toml"), &cfg, summary)?;
    Ok(out)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
