//! The two benchmark systems: a driven dipole-coupled emitter chain with
//! collective decay, and an adiabatic annealer whose ground state encodes
//! the prime factors of an odd bi-prime.

use std::f64::consts::PI;

use ndarray::Array2;
use thiserror::Error;

use crate::eom::{Schedule, SystemSpec};
use crate::opalg::{OperatorSum, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("emitter spacing d/λ = {0} gives a singular coupling (ξ = 0)")]
    Singular(f64),
    #[error("invalid parameters: {0}")]
    Invalid(String),
}

/// Time handle of the chain drive.
pub const DRIVE_HANDLE: &str = "drive";
/// Time handle multiplying the transverse-field Hamiltonian, `1 − s`.
pub const INITIAL_HANDLE: &str = "ramp_down";
/// Time handle multiplying the problem Hamiltonian, `s`.
pub const PROBLEM_HANDLE: &str = "ramp_up";

/// Parameters of the emitter chain. Rates are in units where `gamma` sets
/// the time scale; `t_total` and `t_off` are given as `Γt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipoleChainParams {
    pub n: usize,
    pub d_over_lambda: f64,
    pub gamma: f64,
    pub eta_over_gamma: f64,
    pub omega0: f64,
    pub t_total: f64,
    pub t_off: f64,
}

impl Default for DipoleChainParams {
    fn default() -> Self {
        Self { n: 5, d_over_lambda: 0.15, gamma: 1.0, eta_over_gamma: 2.0, omega0: 0.0, t_total: 10.0, t_off: 5.0 }
    }
}

impl DipoleChainParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n == 0 {
            return Err(ModelError::Invalid("chain needs at least one emitter".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(ModelError::Invalid(format!("decay rate must be positive, got {}", self.gamma)));
        }
        if self.d_over_lambda == 0.0 {
            return Err(ModelError::Singular(0.0));
        }
        if !(self.d_over_lambda > 0.0) {
            return Err(ModelError::Invalid(format!("spacing must be positive, got {}", self.d_over_lambda)));
        }
        if !(self.t_total > 0.0) || self.t_off > self.t_total || self.t_off < 0.0 {
            return Err(ModelError::Invalid(format!(
                "need 0 ≤ t_off ≤ t_total with t_total > 0, got t_off={} t_total={}",
                self.t_off, self.t_total
            )));
        }
        Ok(())
    }
}

/// Coherent coupling for two dipoles perpendicular to their separation,
/// `ξ = k₀r`, in units of `Γ`.
pub fn coherent_coupling(xi: f64, gamma: f64) -> f64 {
    let (s, c) = xi.sin_cos();
    -0.75 * gamma * (c / xi - (s / (xi * xi) + c / (xi * xi * xi)))
}

/// Collective decay rate for the same geometry.
pub fn incoherent_coupling(xi: f64, gamma: f64) -> f64 {
    let (s, c) = xi.sin_cos();
    1.5 * gamma * (s / xi + (c / (xi * xi) - s / (xi * xi * xi)))
}

/// `(Ω, Γ)` coupling matrices of the chain. Diagonals are `Ωᵢᵢ = 0` and
/// `Γᵢᵢ = Γ`.
pub fn dipole_couplings(p: &DipoleChainParams) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
    if p.d_over_lambda == 0.0 {
        return Err(ModelError::Singular(0.0));
    }
    p.validate()?;
    let n = p.n;
    let mut omega = Array2::zeros((n, n));
    let mut gamma = Array2::zeros((n, n));
    for i in 0..n {
        gamma[[i, i]] = p.gamma;
        for j in i + 1..n {
            let xi = 2.0 * PI * p.d_over_lambda * (j - i) as f64;
            let (o, g) = (coherent_coupling(xi, p.gamma), incoherent_coupling(xi, p.gamma));
            omega[[i, j]] = o;
            omega[[j, i]] = o;
            gamma[[i, j]] = g;
            gamma[[j, i]] = g;
        }
    }
    Ok((omega, gamma))
}

/// Chain system with the drive switched off at `t_off/Γ`.
pub fn build_chain_system(p: &DipoleChainParams) -> Result<SystemSpec, ModelError> {
    let (omega, gamma) = dipole_couplings(p)?;
    let n = p.n;
    let mut h = OperatorSum::zero(n);
    let mut drive = OperatorSum::zero(n);
    for i in 1..=n {
        h = h.add(&OperatorSum::sigma_22(n, i).scale(C64::new(p.omega0, 0.0))).expect("same size");
        for j in 1..=n {
            if i != j {
                let hop = OperatorSum::sigma_plus(n, i).multiply(&OperatorSum::sigma_minus(n, j)).expect("same size");
                h = h.add(&hop.scale(C64::new(omega[[i - 1, j - 1]], 0.0))).expect("same size");
            }
        }
        drive = drive.add(&OperatorSum::sigma_x(n, i)).expect("same size");
    }
    let eta = p.eta_over_gamma * p.gamma;
    let mut sys = SystemSpec::new(n);
    if !h.is_zero() {
        sys = sys.with_term(crate::eom::CONSTANT_HANDLE, h);
    }
    sys = sys
        .with_term(DRIVE_HANDLE, drive.scale(C64::new(eta, 0.0)))
        .with_schedule(DRIVE_HANDLE, Schedule::Window { start: 0.0, end: p.t_off / p.gamma })
        .with_decay(gamma.mapv(|g| C64::new(g, 0.0)));
    Ok(sys)
}

/// Default transverse-field strength. With `T = 10` and `M = 1000` this
/// reproduces the published mean-field error sums for ω = 15 and ω = 21.
pub const DEFAULT_XI: f64 = 10.0;
/// Default sweep duration `T`.
pub const DEFAULT_SWEEP_TIME: f64 = 10.0;

/// Parameters of the factoring annealer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiprimeParams {
    pub omega: u64,
    pub k: usize,
    pub l: usize,
    /// Transverse-field strength of the initial Hamiltonian.
    pub xi: f64,
    /// Sweep duration `T`.
    pub t_total: f64,
    /// Energy scale `ħΩ` of the problem Hamiltonian.
    pub hbar_omega: f64,
}

impl BiprimeParams {
    /// Parameters with the minimal bit layout for `omega` and default
    /// [`DEFAULT_XI`], [`DEFAULT_SWEEP_TIME`] and `ħΩ = 1`.
    pub fn for_number(omega: u64) -> Result<Self, ModelError> {
        let layout = biprime_bit_layout(omega)?;
        Ok(Self { omega, k: layout.k, l: layout.l, xi: DEFAULT_XI, t_total: DEFAULT_SWEEP_TIME, hbar_omega: 1.0 })
    }

    pub fn n_qubits(&self) -> usize {
        self.k + self.l
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.omega <= 1 || self.omega % 2 == 0 {
            return Err(ModelError::Invalid(format!("ω must be odd and > 1, got {}", self.omega)));
        }
        check_layout(self.k, self.l)?;
        if !(self.t_total > 0.0) {
            return Err(ModelError::Invalid(format!("sweep time must be positive, got {}", self.t_total)));
        }
        Ok(())
    }
}

fn check_layout(k: usize, l: usize) -> Result<(), ModelError> {
    let n = k + l;
    let half = n.div_ceil(2);
    if l == 0 || !(k >= half && half > l) {
        return Err(ModelError::Invalid(format!("bit widths must satisfy k ≥ ⌈n/2⌉ > l ≥ 1, got k={k}, l={l}")));
    }
    Ok(())
}

/// Bit widths of the two factors: `a` (larger) has `k+1` bits and `b` has
/// `l+1`, with `n = k + l` unknown bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitLayout {
    pub k: usize,
    pub l: usize,
    pub n: usize,
    pub a: u64,
    pub b: u64,
}

/// Prime factors `(a, b)` with `a ≥ b` of an odd semiprime, found by trial
/// division.
pub fn semiprime_factors(omega: u64) -> Result<(u64, u64), ModelError> {
    if omega <= 1 || omega % 2 == 0 {
        return Err(ModelError::Invalid(format!("ω must be odd and > 1, got {omega}")));
    }
    let is_prime = |x: u64| x >= 2 && (2..).take_while(|d| d * d <= x).all(|d| x % d != 0);
    let mut d = 3;
    while d * d <= omega {
        if omega % d == 0 {
            let other = omega / d;
            if is_prime(d) && is_prime(other) {
                return Ok((other, d));
            }
            break;
        }
        d += 2;
    }
    Err(ModelError::Invalid(format!("{omega} is not a product of two primes")))
}

/// Minimal layout satisfying `k ≥ ⌈n/2⌉ > l` in which both factors fit.
pub fn biprime_bit_layout(omega: u64) -> Result<BitLayout, ModelError> {
    let (a, b) = semiprime_factors(omega)?;
    let k_min = (63 - a.leading_zeros()) as usize;
    let l_min = (63 - b.leading_zeros()) as usize;
    for n in k_min + l_min.. {
        for l in l_min..=n.saturating_sub(k_min) {
            let k = n - l;
            if check_layout(k, l).is_ok() {
                return Ok(BitLayout { k, l, n, a, b });
            }
        }
    }
    unreachable!("layout search always terminates")
}

/// `Ĥ_p = ħΩ (ω𝟙 − (𝟙 + Σᵢ 2ⁱ σ²²ᵢ)(𝟙 + Σⱼ 2ʲ σ²²_{k+j}))²`
pub fn problem_hamiltonian(p: &BiprimeParams) -> Result<OperatorSum, ModelError> {
    p.validate()?;
    let n = p.n_qubits();
    let mut a = OperatorSum::identity(n);
    for i in 1..=p.k {
        a = a.add(&OperatorSum::sigma_22(n, i).scale(C64::new((1u64 << i) as f64, 0.0))).expect("same size");
    }
    let mut b = OperatorSum::identity(n);
    for j in 1..=p.l {
        b = b.add(&OperatorSum::sigma_22(n, p.k + j).scale(C64::new((1u64 << j) as f64, 0.0))).expect("same size");
    }
    let diff = OperatorSum::scalar(n, C64::new(p.omega as f64, 0.0)).sub(&a.multiply(&b).expect("same size")).expect("same size");
    Ok(diff.multiply(&diff).expect("same size").scale(C64::new(p.hbar_omega, 0.0)))
}

/// `Ĥ₀ = −ξ Σₘ σˣₘ`
pub fn transverse_hamiltonian(n: usize, xi: f64) -> OperatorSum {
    let mut h = OperatorSum::zero(n);
    for m in 1..=n {
        h = h.add(&OperatorSum::sigma_x(n, m)).expect("same size");
    }
    h.scale(C64::new(-xi, 0.0))
}

/// Closed annealer `Ĥ(t) = (1 − t/T) Ĥ₀ + (t/T) Ĥ_p`.
pub fn build_biprime_system(p: &BiprimeParams) -> Result<SystemSpec, ModelError> {
    let hp = problem_hamiltonian(p)?;
    let n = p.n_qubits();
    Ok(SystemSpec::new(n)
        .with_term(INITIAL_HANDLE, transverse_hamiltonian(n, p.xi))
        .with_term(PROBLEM_HANDLE, hp)
        .with_schedule(INITIAL_HANDLE, Schedule::RampDown { duration: p.t_total })
        .with_schedule(PROBLEM_HANDLE, Schedule::RampUp { duration: p.t_total }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opalg::Transition;

    #[test]
    fn diagonal_rates_equal_gamma() {
        let p = DipoleChainParams { n: 4, gamma: 1.3, ..Default::default() };
        let (o, g) = dipole_couplings(&p).unwrap();
        for i in 0..4 {
            assert_eq!(g[[i, i]], 1.3);
            assert_eq!(o[[i, i]], 0.0);
        }
    }

    #[test]
    fn half_wavelength_neighbours() {
        let p = DipoleChainParams { n: 2, d_over_lambda: 0.5, ..Default::default() };
        let (o, g) = dipole_couplings(&p).unwrap();
        let expected_g = -3.0 / (2.0 * PI * PI);
        assert!((g[[0, 1]] - expected_g).abs() < 1e-12);
        assert!((g[[0, 1]] + 0.15198).abs() < 1e-5);
        let expected_o = 0.75 * (1.0 / PI - 1.0 / PI.powi(3));
        assert!((o[[0, 1]] - expected_o).abs() < 1e-12);
    }

    #[test]
    fn zero_spacing_is_singular() {
        let p = DipoleChainParams { d_over_lambda: 0.0, ..Default::default() };
        assert_eq!(dipole_couplings(&p), Err(ModelError::Singular(0.0)));
        assert!(build_chain_system(&p).is_err());
    }

    #[test]
    fn single_emitter_chain() {
        let p = DipoleChainParams { n: 1, ..Default::default() };
        let sys = build_chain_system(&p).unwrap();
        assert_eq!(sys.n_sites, 1);
        assert_eq!(sys.dissipators[0].rates[[0, 0]], C64::new(1.0, 0.0));
        // ω₀ = 0 and no pairs: only the drive remains
        assert_eq!(sys.hamiltonian.len(), 1);
        assert_eq!(sys.hamiltonian[0].0, DRIVE_HANDLE);
    }

    #[test]
    fn two_emitter_hopping() {
        let p = DipoleChainParams { n: 2, d_over_lambda: 0.5, ..Default::default() };
        let sys = build_chain_system(&p).unwrap();
        let (_, h) = sys.hamiltonian.iter().find(|(k, _)| k == crate::eom::CONSTANT_HANDLE).unwrap();
        assert_eq!(h.len(), 2);
        let expected = 0.75 * (1.0 / PI - 1.0 / PI.powi(3));
        for t in h.terms() {
            assert_eq!(t.order(), 2);
            assert!((t.coefficient.re - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn drive_switches_off() {
        let sys = build_chain_system(&DipoleChainParams::default()).unwrap();
        let s = sys.schedule(DRIVE_HANDLE);
        assert_eq!(s.value(5.0 - 1e-9), 1.0);
        assert_eq!(s.value(5.0 + 1e-9), 0.0);
        assert_eq!(sys.breakpoints(), vec![0.0, 5.0]);
    }

    #[test]
    fn bit_layouts() {
        let l = biprime_bit_layout(21).unwrap();
        assert_eq!((l.k, l.l, l.n, l.a, l.b), (2, 1, 3, 7, 3));
        let l = biprime_bit_layout(15).unwrap();
        assert_eq!((l.k, l.l, l.n, l.a, l.b), (2, 1, 3, 5, 3));
        assert_eq!(biprime_bit_layout(33).unwrap().n, 4);
        // equal factors need a padded layout
        let l = biprime_bit_layout(9).unwrap();
        assert_eq!((l.k, l.l), (2, 1));
        assert!(biprime_bit_layout(45).is_err());
        assert!(biprime_bit_layout(22).is_err());
        assert!(biprime_bit_layout(7).is_err());
    }

    #[test]
    fn biprime_validation() {
        let mut p = BiprimeParams::for_number(21).unwrap();
        p.omega = 20;
        assert!(build_biprime_system(&p).is_err());
        let p = BiprimeParams { k: 1, l: 2, ..BiprimeParams::for_number(21).unwrap() };
        assert!(build_biprime_system(&p).is_err());
    }

    #[test]
    fn problem_hamiltonian_is_diagonal_with_four_body_terms() {
        let p = BiprimeParams::for_number(33).unwrap();
        let hp = problem_hamiltonian(&p).unwrap();
        assert!(hp.is_diagonal());
        assert!(hp.max_order() >= 3);
        assert!(hp.terms().all(|t| t.factors.iter().all(|f| f.kind == Transition::Excited)));
    }

    #[test]
    fn schedule_endpoints() {
        let p = BiprimeParams::for_number(21).unwrap();
        let sys = build_biprime_system(&p).unwrap();
        let h0 = transverse_hamiltonian(3, p.xi);
        let hp = problem_hamiltonian(&p).unwrap();
        assert_eq!(sys.hamiltonian_at(0.0), h0);
        assert_eq!(sys.hamiltonian_at(p.t_total), hp);
    }
}
