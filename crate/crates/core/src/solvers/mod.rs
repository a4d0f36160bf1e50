//! Integration of moment systems and exact reference dynamics.

mod exact;
mod ode;
mod trajectory;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::eom::{CompiledSystem, EomError, MomentODESystem};
use crate::opalg::{AlgebraError, Transition, C64};

pub use exact::{density_matrix, solve_master_equation, solve_schrodinger, SparseOperator, MAX_MASTER_SITES, MAX_SCHRODINGER_SITES};
pub use ode::StepStats;
pub use trajectory::{series_key, Diagnostics, Observable, PhysicalityViolation, SiteMode, Status, TimeGrid, Trajectory};

use ode::{integrate, Outcome};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("{sites} sites exceed the dense solver limit of {max}")]
    Bound { sites: usize, max: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid initial condition: {0}")]
    InvalidInitial(String),
    #[error("invalid time grid: {0}")]
    Grid(String),
    #[error("invalid integrator configuration: {0}")]
    Config(String),
    #[error(transparent)]
    System(#[from] EomError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Stepping scheme. Only adaptive explicit Runge–Kutta pairs of order ≥ 4
/// with a continuous extension qualify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Dormand–Prince 5(4) with the 4th-order dense output.
    #[default]
    Dopri5,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Dopri5 => write!(f, "dopri5"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dopri5" | "dp5" | "rk45" => Ok(Method::Dopri5),
            other => Err(format!("unknown integration method '{other}' (available: dopri5)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on the step size, in physical time.
    pub max_step: f64,
    /// Accepted plus rejected steps before giving up; 0 means unlimited.
    pub max_steps: usize,
    /// A moment magnitude above this ends the run as diverged.
    pub divergence_bound: f64,
    pub method: Method,
    /// Integrate one member of each conjugate pair only.
    pub conjugate_reduction: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: f64::INFINITY,
            max_steps: 20_000_000,
            divergence_bound: 1e6,
            method: Method::Dopri5,
            conjugate_reduction: true,
        }
    }
}

impl IntegratorConfig {
    /// Tighter settings for the exact reference solvers, which need norm
    /// drift well below 1e-9 over a full sweep.
    pub fn reference() -> Self {
        Self { rel_tol: 1e-12, abs_tol: 1e-14, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) || !(self.abs_tol > 0.0 && self.abs_tol.is_finite()) {
            return Err(SolverError::Config(format!("tolerances must be positive (rel_tol={}, abs_tol={})", self.rel_tol, self.abs_tol)));
        }
        if !(self.divergence_bound > 1.0) {
            return Err(SolverError::Config(format!("divergence_bound must exceed 1, got {}", self.divergence_bound)));
        }
        if !(self.max_step > 0.0) {
            return Err(SolverError::Config(format!("max_step must be positive, got {}", self.max_step)));
        }
        Ok(())
    }
}

pub(crate) fn check_grid(grid: &TimeGrid) -> Result<(), SolverError> {
    if grid.is_empty() {
        return Err(SolverError::Grid("empty grid".into()));
    }
    if !grid.is_monotone() {
        return Err(SolverError::Grid("grid points must be finite and strictly increasing".into()));
    }
    if !(grid.time_scale > 0.0 && grid.time_scale.is_finite()) {
        return Err(SolverError::Grid(format!("time scale must be positive, got {}", grid.time_scale)));
    }
    Ok(())
}

pub(crate) fn status_from(outcome: Outcome, scale: f64) -> Status {
    match outcome {
        Outcome::Completed => Status::Completed,
        Outcome::Diverged(t) => Status::Diverged { at: t / scale },
        Outcome::Failed(t, reason) => Status::SolverFailure { at: t / scale, reason },
    }
}

/// Integrates a closed moment system from the full initial variable vector
/// `init` and samples first-order observables on `grid`.
pub fn integrate_moments(
    sys: &MomentODESystem,
    init: &[C64],
    grid: &TimeGrid,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, SolverError> {
    if init.len() != sys.variables.len() {
        return Err(SolverError::InvalidInitial(format!("{} initial values for {} variables", init.len(), sys.variables.len())));
    }
    check_grid(grid)?;
    cfg.validate()?;
    sys.check_closed()?;

    let n = sys.n_sites;
    let mut lookup = Vec::with_capacity(n);
    for m in 1..=n {
        let idx = |k| {
            sys.site_variable(m, k)
                .ok_or_else(|| SolverError::Contract(format!("system has no first-order variable for site {m}")))
        };
        lookup.push((idx(Transition::Excited)?, idx(Transition::Raise)?, idx(Transition::Lower)?));
    }

    let compiled = CompiledSystem::new(sys, cfg.conjugate_reduction);
    let y0 = compiled.pack(init);
    let mut scratch = Vec::new();
    let rhs = |t: f64, y: &[C64], out: &mut [C64]| compiled.eval(t, y, out, &mut scratch);

    let mut breakpoints: Vec<f64> = sys.schedules.values().flat_map(|s| s.breakpoints()).collect();
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();

    let mut traj = Trajectory::empty(grid.clone(), n);
    let (outcome, stats) = integrate(
        rhs,
        &y0,
        &grid.times(),
        &breakpoints,
        cfg,
        |idx, y| {
            for (m, &(e, p, l)) in lookup.iter().enumerate() {
                traj.set(idx, m + 1, compiled.variable(y, e), compiled.variable(y, p), compiled.variable(y, l));
            }
        },
        |_, _| Ok(()),
    );
    traj.status = status_from(outcome, grid.time_scale);
    traj.diagnostics.rhs_evals = stats.rhs_evals;
    traj.diagnostics.accepted_steps = stats.accepted;
    traj.diagnostics.rejected_steps = stats.rejected;
    traj.finish_diagnostics();
    if !traj.status.is_completed() {
        log::info!("moment integration (order {}): {}", sys.order, traj.status);
    }
    Ok(traj)
}

/// Full time series of every variable, for consistency checks. Rows follow
/// the grid, columns follow `sys.variables`.
pub fn integrate_all_variables(
    sys: &MomentODESystem,
    init: &[C64],
    grid: &TimeGrid,
    cfg: &IntegratorConfig,
) -> Result<(Vec<Vec<C64>>, Status), SolverError> {
    if init.len() != sys.variables.len() {
        return Err(SolverError::InvalidInitial(format!("{} initial values for {} variables", init.len(), sys.variables.len())));
    }
    check_grid(grid)?;
    cfg.validate()?;
    sys.check_closed()?;
    let compiled = CompiledSystem::new(sys, cfg.conjugate_reduction);
    let y0 = compiled.pack(init);
    let mut scratch = Vec::new();
    let rhs = |t: f64, y: &[C64], out: &mut [C64]| compiled.eval(t, y, out, &mut scratch);
    let mut breakpoints: Vec<f64> = sys.schedules.values().flat_map(|s| s.breakpoints()).collect();
    breakpoints.sort_by(f64::total_cmp);
    let nv = sys.variables.len();
    let mut rows = vec![vec![C64::new(f64::NAN, f64::NAN); nv]; grid.len()];
    let (outcome, _) = integrate(
        rhs,
        &y0,
        &grid.times(),
        &breakpoints,
        cfg,
        |idx, y| {
            for (v, slot) in rows[idx].iter_mut().enumerate() {
                *slot = compiled.variable(y, v);
            }
        },
        |_, _| Ok(()),
    );
    Ok((rows, status_from(outcome, grid.time_scale)))
}
