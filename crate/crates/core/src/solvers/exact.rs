//! Full-quantum-dynamics references: the Lindblad master equation on a dense
//! density matrix, and the Schrödinger equation for closed systems.
//!
//! Basis index bit `m − 1` is set when site `m` is excited.

use ndarray::Array2;

use crate::eom::{ProductState, Schedule, SystemSpec};
use crate::opalg::{OperatorSum, C64};

use super::ode::{integrate, Outcome};
use super::{IntegratorConfig, SolverError, TimeGrid, Trajectory};

pub const MAX_MASTER_SITES: usize = 12;
pub const MAX_SCHRODINGER_SITES: usize = 20;
const NORM_DRIFT_LIMIT: f64 = 1e-6;

/// Sparse matrix as `(row, col, value)` triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    pub dim: usize,
    pub entries: Vec<(usize, usize, C64)>,
}

impl SparseOperator {
    /// Matrix of `op` in the computational basis.
    pub fn from_operator(op: &OperatorSum) -> Self {
        let n = op.n_sites();
        let dim = 1usize << n;
        let mut acc: std::collections::BTreeMap<(usize, usize), C64> = std::collections::BTreeMap::new();
        for (factors, c) in op.iter() {
            'states: for col in 0..dim {
                let mut row = col;
                for f in factors {
                    let bit = 1usize << (f.site - 1);
                    let (a, b) = f.kind.levels();
                    let occupied = col & bit != 0;
                    if occupied != (b == 2) {
                        continue 'states;
                    }
                    if a == 2 {
                        row |= bit;
                    } else {
                        row &= !bit;
                    }
                }
                *acc.entry((row, col)).or_default() += *c;
            }
        }
        Self { dim, entries: acc.into_iter().filter(|(_, v)| *v != C64::default()).map(|((r, c), v)| (r, c, v)).collect() }
    }

    /// `out += scale · A x`
    pub fn apply_add(&self, x: &[C64], scale: C64, out: &mut [C64]) {
        for &(r, c, v) in &self.entries {
            out[r] += scale * v * x[c];
        }
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut m = Array2::zeros((self.dim, self.dim));
        for &(r, c, v) in &self.entries {
            m[[r, c]] += v;
        }
        m
    }
}

fn hamiltonian_parts(sys: &SystemSpec) -> Vec<(Schedule, SparseOperator)> {
    sys.hamiltonian.iter().map(|(h, op)| (sys.schedule(h), SparseOperator::from_operator(op))).collect()
}

/// `ρ = |ψ⟩⟨ψ|` for a product state.
pub fn density_matrix(state: &ProductState) -> Array2<C64> {
    let psi = state.state_vector();
    let d = psi.len();
    Array2::from_shape_fn((d, d), |(r, c)| psi[r] * psi[c].conj())
}

fn check_density(rho: &Array2<C64>) -> Result<(), SolverError> {
    let d = rho.nrows();
    let mut trace = C64::default();
    for i in 0..d {
        trace += rho[[i, i]];
        for j in 0..d {
            if (rho[[i, j]] - rho[[j, i]].conj()).norm() > 1e-12 {
                return Err(SolverError::InvalidInitial(format!("density matrix not Hermitian at ({i},{j})")));
            }
        }
    }
    if (trace - 1.0).norm() > 1e-12 {
        return Err(SolverError::InvalidInitial(format!("density matrix trace {trace}")));
    }
    // Cholesky of ρ + εI succeeds iff ρ is (numerically) positive semidefinite
    let eps = 1e-10;
    let mut l = Array2::<C64>::zeros((d, d));
    for j in 0..d {
        let mut diag = rho[[j, j]].re + eps;
        for k in 0..j {
            diag -= l[[j, k]].norm_sqr();
        }
        if diag <= 0.0 {
            return Err(SolverError::InvalidInitial("density matrix is not positive semidefinite".into()));
        }
        let ljj = diag.sqrt();
        l[[j, j]] = C64::new(ljj, 0.0);
        for i in j + 1..d {
            let mut s = rho[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = s / ljj;
        }
    }
    Ok(())
}

/// `entry(r, c)` returns `ρ[r][c]`, so `⟨σᵃᵇ⟩ = tr(ρ σᵃᵇ) = ρ[b][a]`.
fn site_observables(n: usize, idx: usize, traj: &mut Trajectory, mut entry: impl FnMut(usize, usize) -> C64) {
    let dim = 1usize << n;
    for m in 1..=n {
        let bit = 1usize << (m - 1);
        let mut s22 = C64::default();
        let mut sp = C64::default();
        let mut sm = C64::default();
        for s in 0..dim {
            if s & bit != 0 {
                s22 += entry(s, s);
            } else {
                sp += entry(s, s | bit);
                sm += entry(s | bit, s);
            }
        }
        traj.set(idx, m, s22, sp, sm);
    }
}

fn finish(mut traj: Trajectory, outcome: Outcome, stats: super::ode::StepStats, scale: f64) -> Trajectory {
    traj.status = super::status_from(outcome, scale);
    traj.diagnostics.rhs_evals = stats.rhs_evals;
    traj.diagnostics.accepted_steps = stats.accepted;
    traj.diagnostics.rejected_steps = stats.rejected;
    traj.finish_diagnostics();
    traj
}

/// Evolves `ρ` under `∂ₜρ = −i[H(t), ρ] + 𝓛[ρ]` with collective decay.
pub fn solve_master_equation(
    sys: &SystemSpec,
    rho0: &Array2<C64>,
    grid: &TimeGrid,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, SolverError> {
    sys.validate()?;
    let n = sys.n_sites;
    if n > MAX_MASTER_SITES {
        return Err(SolverError::Bound { sites: n, max: MAX_MASTER_SITES });
    }
    let dim = 1usize << n;
    if rho0.dim() != (dim, dim) {
        return Err(SolverError::InvalidInitial(format!("density matrix shape {:?}, expected ({dim}, {dim})", rho0.dim())));
    }
    check_density(rho0)?;
    super::check_grid(grid)?;
    cfg.validate()?;

    let parts = hamiltonian_parts(sys);
    // anti-Hermitian part −(i/2) Σ Γᵢⱼ σ⁺ᵢσ⁻ⱼ of the effective Hamiltonian
    let mut decay_hop = OperatorSum::zero(n);
    let mut jumps: Vec<(usize, usize, C64)> = Vec::new();
    for ch in &sys.dissipators {
        for i in 0..n {
            for j in 0..n {
                let g = ch.rates[[i, j]];
                if g == C64::default() {
                    continue;
                }
                jumps.push((1 << i, 1 << j, g));
                let hop = OperatorSum::sigma_plus(n, i + 1).multiply(&OperatorSum::sigma_minus(n, j + 1))?;
                decay_hop = decay_hop.add(&hop.scale(g * C64::new(0.0, -0.5)))?;
            }
        }
    }
    let decay_hop = SparseOperator::from_operator(&decay_hop);

    let rhs = |t: f64, rho: &[C64], out: &mut [C64]| {
        out.iter_mut().for_each(|x| *x = C64::default());
        // −i (H_eff ρ − ρ H_eff†)
        let mut apply = |op: &SparseOperator, f: C64| {
            for &(r, c, v) in &op.entries {
                let hv = f * v;
                let left = C64::new(hv.im, -hv.re);
                let right = C64::new(hv.im, hv.re);
                for x in 0..dim {
                    // −i (H ρ)[r][x] and +i (ρ H†)[x][r]
                    out[r * dim + x] += left * rho[c * dim + x];
                    out[x * dim + r] += right * rho[x * dim + c];
                }
            }
        };
        for (sch, op) in &parts {
            let f = sch.value(t);
            if f != 0.0 {
                apply(op, C64::new(f, 0.0));
            }
        }
        apply(&decay_hop, C64::new(1.0, 0.0));
        for &(bi, bj, g) in &jumps {
            for r in 0..dim {
                if r & bi != 0 {
                    continue;
                }
                let src = (r | bi) * dim;
                for c in 0..dim {
                    if c & bj == 0 {
                        out[r * dim + c] += g * rho[src + (c | bj)];
                    }
                }
            }
        }
    };

    let mut traj = Trajectory::empty(grid.clone(), n);
    let y0: Vec<C64> = rho0.iter().copied().collect();
    let times = grid.times();
    let mut max_drift: f64 = 0.0;
    let (outcome, stats) = integrate(
        rhs,
        &y0,
        &times,
        &sys.breakpoints(),
        cfg,
        |idx, rho| {
            site_observables(n, idx, &mut traj, |r, c| rho[r * dim + c]);
        },
        |_, rho| {
            let tr: C64 = (0..dim).map(|i| rho[i * dim + i]).sum();
            let drift = (tr - 1.0).norm();
            max_drift = max_drift.max(drift);
            if drift > NORM_DRIFT_LIMIT {
                Err(format!("trace drift {drift:e}"))
            } else {
                Ok(())
            }
        },
    );
    traj.diagnostics.max_norm_drift = Some(max_drift);
    Ok(finish(traj, outcome, stats, grid.time_scale))
}

/// Unitary evolution `i∂ₜψ = H(t)ψ` of a closed system.
pub fn solve_schrodinger(
    sys: &SystemSpec,
    psi0: &[C64],
    grid: &TimeGrid,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, SolverError> {
    sys.validate()?;
    if !sys.is_closed() {
        return Err(SolverError::Contract("Schrödinger evolution requires a closed system".into()));
    }
    let n = sys.n_sites;
    if n > MAX_SCHRODINGER_SITES {
        return Err(SolverError::Bound { sites: n, max: MAX_SCHRODINGER_SITES });
    }
    let dim = 1usize << n;
    if psi0.len() != dim {
        return Err(SolverError::InvalidInitial(format!("state vector length {}, expected {dim}", psi0.len())));
    }
    let norm: f64 = psi0.iter().map(|x| x.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(SolverError::InvalidInitial(format!("state norm² {norm}")));
    }
    super::check_grid(grid)?;
    cfg.validate()?;

    let parts = hamiltonian_parts(sys);
    let rhs = |t: f64, psi: &[C64], out: &mut [C64]| {
        out.iter_mut().for_each(|x| *x = C64::default());
        for (sch, op) in &parts {
            let f = sch.value(t);
            if f != 0.0 {
                op.apply_add(psi, C64::new(0.0, -f), out);
            }
        }
    };

    let mut traj = Trajectory::empty(grid.clone(), n);
    let times = grid.times();
    let mut max_drift: f64 = 0.0;
    let (outcome, stats) = integrate(
        rhs,
        psi0,
        &times,
        &sys.breakpoints(),
        cfg,
        |idx, psi| {
            site_observables(n, idx, &mut traj, |r, c| psi[r] * psi[c].conj());
        },
        |_, psi| {
            let norm: f64 = psi.iter().map(|x| x.norm_sqr()).sum();
            let drift = (norm - 1.0).abs();
            max_drift = max_drift.max(drift);
            if drift > NORM_DRIFT_LIMIT {
                Err(format!("norm drift {drift:e}"))
            } else {
                Ok(())
            }
        },
    );
    traj.diagnostics.max_norm_drift = Some(max_drift);
    Ok(finish(traj, outcome, stats, grid.time_scale))
}
