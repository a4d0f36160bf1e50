use std::collections::BTreeMap;
use std::fmt;

use crate::opalg::C64;

/// Output grid. `points` hold the model's natural time variable `χ`
/// (`Γt` for the chain, `s = t/T` for the annealer); physical time is
/// `χ · time_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub points: Vec<f64>,
    pub time_scale: f64,
}

impl TimeGrid {
    /// `M + 1` uniform points `χᵢ = i · end / M`.
    pub fn uniform(end: f64, m: usize, time_scale: f64) -> Self {
        let m = m.max(1);
        let points = (0..=m).map(|i| if i == m { end } else { end * i as f64 / m as f64 }).collect();
        Self { points, time_scale }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|x| x * self.time_scale).collect()
    }

    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[1] > w[0]) && self.points.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Completed,
    /// Integration stopped at `χ = at` because a value exceeded the
    /// divergence bound or the step size underflowed.
    Diverged { at: f64 },
    SolverFailure { at: f64, reason: String },
}

impl Status {
    pub fn is_completed(&self) -> bool {
        matches!(self, Status::Completed)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Completed => write!(f, "completed"),
            Status::Diverged { at } => write!(f, "diverged at {at}"),
            Status::SolverFailure { at, reason } => write!(f, "solver failure at {at}: {reason}"),
        }
    }
}

/// First grid point at which an observable left its physical range.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalityViolation {
    pub at: f64,
    pub observable: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub rhs_evals: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Largest `|tr ρ − 1|` or `|‖ψ‖² − 1|` seen (exact solvers only).
    pub max_norm_drift: Option<f64>,
    pub physicality: Option<PhysicalityViolation>,
    /// Largest absolute value of any first-order observable on the grid.
    pub max_abs_observable: f64,
}

/// Single-site observables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Observable {
    /// σ²²
    S22,
    /// σᶻ = 2σ²² − 1
    Z,
    /// σˣ = σ⁺ + σ⁻
    X,
}

impl Observable {
    pub const ALL: [Observable; 3] = [Observable::S22, Observable::Z, Observable::X];

    pub fn label(self) -> &'static str {
        match self {
            Observable::S22 => "22",
            Observable::Z => "z",
            Observable::X => "x",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "22" | "s22" => Some(Observable::S22),
            "z" | "sz" => Some(Observable::Z),
            "x" | "sx" => Some(Observable::X),
            _ => None,
        }
    }
}

/// Site selection for observables and error measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SiteMode {
    /// 1-based site.
    Site(usize),
    /// Average over all sites.
    Mean,
}

pub fn series_key(basis: &str, site: usize) -> String {
    format!("{basis}[{site}]")
}

/// Time series of first-order expectation values from any solver.
///
/// `series` stores complex `s22[m]`, `sp[m]`, `sm[m]` for every site;
/// `σᶻ`, `σˣ` and site means are derived on demand. Entries after a
/// divergence or failure are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub n_sites: usize,
    pub series: BTreeMap<String, Vec<C64>>,
    pub status: Status,
    pub diagnostics: Diagnostics,
}

impl Trajectory {
    pub(crate) fn empty(grid: TimeGrid, n_sites: usize) -> Self {
        let nan = C64::new(f64::NAN, f64::NAN);
        let mut series = BTreeMap::new();
        for m in 1..=n_sites {
            for basis in ["s22", "sp", "sm"] {
                series.insert(series_key(basis, m), vec![nan; grid.len()]);
            }
        }
        Self { grid, n_sites, series, status: Status::Completed, diagnostics: Diagnostics::default() }
    }

    /// Rebuilds a trajectory from stored series, e.g. read back from disk.
    /// Every site needs `s22`, `sp` and `sm` series of grid length.
    pub fn from_series(
        grid: TimeGrid,
        n_sites: usize,
        series: BTreeMap<String, Vec<C64>>,
        status: Status,
    ) -> Result<Self, String> {
        for m in 1..=n_sites {
            for basis in ["s22", "sp", "sm"] {
                let key = series_key(basis, m);
                match series.get(&key) {
                    None => return Err(format!("missing series {key}")),
                    Some(v) if v.len() != grid.len() => {
                        return Err(format!("series {key} has {} points, grid has {}", v.len(), grid.len()))
                    }
                    Some(_) => {}
                }
            }
        }
        let mut t = Self { grid, n_sites, series, status, diagnostics: Diagnostics::default() };
        t.finish_diagnostics();
        Ok(t)
    }

    pub(crate) fn set(&mut self, idx: usize, site: usize, s22: C64, sp: C64, sm: C64) {
        for (basis, v) in [("s22", s22), ("sp", sp), ("sm", sm)] {
            self.series.get_mut(&series_key(basis, site)).expect("series exists")[idx] = v;
        }
    }

    fn raw(&self, basis: &str, site: usize) -> &[C64] {
        self.series.get(&series_key(basis, site)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Real series of `obs` on one site.
    pub fn site_series(&self, obs: Observable, site: usize) -> Vec<f64> {
        match obs {
            Observable::S22 => self.raw("s22", site).iter().map(|v| v.re).collect(),
            Observable::Z => self.raw("s22", site).iter().map(|v| 2.0 * v.re - 1.0).collect(),
            Observable::X => self.raw("sp", site).iter().zip(self.raw("sm", site)).map(|(p, m)| (p + m).re).collect(),
        }
    }

    /// Site-averaged real series of `obs`.
    pub fn mean_series(&self, obs: Observable) -> Vec<f64> {
        let mut acc = vec![0.0; self.grid.len()];
        for m in 1..=self.n_sites {
            for (a, v) in acc.iter_mut().zip(self.site_series(obs, m)) {
                *a += v;
            }
        }
        acc.iter().map(|a| a / self.n_sites as f64).collect()
    }

    pub fn observable(&self, obs: Observable, mode: SiteMode) -> Vec<f64> {
        match mode {
            SiteMode::Site(m) => self.site_series(obs, m),
            SiteMode::Mean => self.mean_series(obs),
        }
    }

    /// Number of leading grid points carrying finite data.
    pub fn valid_len(&self) -> usize {
        let mut n = self.grid.len();
        for v in self.series.values() {
            let k = v.iter().position(|x| !x.re.is_finite() || !x.im.is_finite()).unwrap_or(v.len());
            n = n.min(k);
        }
        n
    }

    /// Values of every stored series at the last grid point.
    pub fn final_value(&self, basis: &str, site: usize) -> Option<C64> {
        self.raw(basis, site).last().copied()
    }

    pub(crate) fn finish_diagnostics(&mut self) {
        let valid = self.valid_len();
        let mut max_abs: f64 = 0.0;
        let mut violation: Option<PhysicalityViolation> = None;
        const TOL: f64 = 1e-6;
        for i in 0..valid {
            for m in 1..=self.n_sites {
                let p = self.raw("s22", m)[i].re;
                let x = (self.raw("sp", m)[i] + self.raw("sm", m)[i]).re;
                max_abs = max_abs.max(p.abs()).max(x.abs()).max(self.raw("sp", m)[i].norm());
                if violation.is_none() {
                    if !(-TOL..=1.0 + TOL).contains(&p) {
                        violation = Some(PhysicalityViolation { at: self.grid.points[i], observable: series_key("s22", m), value: p });
                    } else if x.abs() > 1.0 + TOL {
                        violation = Some(PhysicalityViolation { at: self.grid.points[i], observable: series_key("sx", m), value: x });
                    }
                }
            }
        }
        if let Some(v) = &violation {
            log::warn!("nonphysical value {} = {} at {}", v.observable, v.value, v.at);
        }
        self.diagnostics.max_abs_observable = max_abs;
        self.diagnostics.physicality = violation;
    }
}
