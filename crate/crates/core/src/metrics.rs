//! Squared-difference error measures against a reference trajectory and the
//! annealer bit read-out.

use std::fmt::Write as _;

use thiserror::Error;

use crate::solvers::{Observable, SiteMode, Status, Trajectory};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("site {site} not present in a {n_sites}-site trajectory")]
    MissingSite { site: usize, n_sites: usize },
    #[error("bit read-out refused: trajectory status is {0}")]
    Refused(Status),
    #[error("layout k={k}, l={l} needs {need} sites, trajectory has {have}")]
    Layout { k: usize, l: usize, need: usize, have: usize },
}

/// Pointwise `(approx − exact)²` of one real observable.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub points: Vec<f64>,
    pub values: Vec<f64>,
    pub observable: Observable,
    pub site: SiteMode,
    pub order: Option<usize>,
    /// Set when the approximate run did not complete; `values` then cover
    /// only the valid prefix of the grid.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    pub total: f64,
    /// Number of summed points.
    pub points: usize,
    /// Grid size `M` of the full run.
    pub m: usize,
    pub order: Option<usize>,
    pub observable: Observable,
    pub site: SiteMode,
    pub truncated: bool,
}

impl ErrorSummary {
    /// For truncated runs, the total with every missing point charged at
    /// `bound²`, capped at `bound² · M`.
    pub fn saturated(&self, bound: f64) -> f64 {
        let cap = bound * bound * self.m as f64;
        if !self.truncated {
            return self.total.min(cap);
        }
        let missing = (self.m + 1).saturating_sub(self.points) as f64;
        (self.total + missing * bound * bound).min(cap)
    }
}

fn same_grid(a: &Trajectory, b: &Trajectory) -> Result<(), MetricsError> {
    if a.grid.points.len() != b.grid.points.len() {
        return Err(MetricsError::GridMismatch(format!("{} vs {} points", a.grid.points.len(), b.grid.points.len())));
    }
    if a.grid.points != b.grid.points || a.grid.time_scale != b.grid.time_scale {
        return Err(MetricsError::GridMismatch("grid points differ".into()));
    }
    if a.n_sites != b.n_sites {
        return Err(MetricsError::GridMismatch(format!("{} vs {} sites", a.n_sites, b.n_sites)));
    }
    Ok(())
}

pub fn squared_difference(
    approx: &Trajectory,
    exact: &Trajectory,
    observable: Observable,
    site: SiteMode,
) -> Result<ErrorSeries, MetricsError> {
    same_grid(approx, exact)?;
    if let SiteMode::Site(m) = site {
        if m == 0 || m > approx.n_sites {
            return Err(MetricsError::MissingSite { site: m, n_sites: approx.n_sites });
        }
    }
    let valid = approx.valid_len().min(exact.valid_len());
    let a = approx.observable(observable, site);
    let e = exact.observable(observable, site);
    let values = a[..valid].iter().zip(&e[..valid]).map(|(x, y)| (x - y) * (x - y)).collect();
    Ok(ErrorSeries {
        points: approx.grid.points[..valid].to_vec(),
        values,
        observable,
        site,
        order: None,
        truncated: valid < approx.grid.len() || !approx.status.is_completed(),
    })
}

/// Plain sum of the series values, without time-step weighting.
pub fn cumulative_error(series: &ErrorSeries) -> ErrorSummary {
    ErrorSummary {
        total: series.values.iter().sum(),
        points: series.values.len(),
        m: series.points.len().saturating_sub(1),
        order: series.order,
        observable: series.observable,
        site: series.site,
        truncated: series.truncated,
    }
}

/// Cumulative error with `M` taken from the full grid of `approx`.
pub fn error_summary(
    approx: &Trajectory,
    exact: &Trajectory,
    observable: Observable,
    site: SiteMode,
    order: Option<usize>,
) -> Result<ErrorSummary, MetricsError> {
    let mut series = squared_difference(approx, exact, observable, site)?;
    series.order = order;
    let mut s = cumulative_error(&series);
    s.m = approx.grid.len().saturating_sub(1);
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BitReadout {
    /// `a₁ … a_k` followed by `b₁ … b_l`.
    pub bits: Vec<u8>,
    /// Final `⟨σ²²ₘ⟩` per site.
    pub expectations: Vec<f64>,
    pub a: u64,
    pub b: u64,
    pub product: u64,
    pub valid: bool,
}

/// Largest distance between a final expectation and its rounded bit that
/// still counts as a confident read-out.
pub const BIT_TOLERANCE: f64 = 0.25;

/// Rounds the final site populations to bits and assembles the factors
/// `a = 1 + Σ 2^i a_i`, `b = 1 + Σ 2^j b_j`.
pub fn read_bits(traj: &Trajectory, k: usize, l: usize, omega: u64) -> Result<BitReadout, MetricsError> {
    if !traj.status.is_completed() {
        return Err(MetricsError::Refused(traj.status.clone()));
    }
    if k + l != traj.n_sites {
        return Err(MetricsError::Layout { k, l, need: k + l, have: traj.n_sites });
    }
    let expectations: Vec<f64> = (1..=traj.n_sites)
        .map(|m| traj.final_value("s22", m).map(|v| v.re).unwrap_or(f64::NAN))
        .collect();
    if expectations.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::Refused(traj.status.clone()));
    }
    let bits: Vec<u8> = expectations.iter().map(|&v| u8::from(v >= 0.5)).collect();
    let assemble = |bs: &[u8]| 1 + bs.iter().enumerate().map(|(i, &b)| (b as u64) << (i + 1)).sum::<u64>();
    let a = assemble(&bits[..k]);
    let b = assemble(&bits[k..]);
    let confident = expectations.iter().zip(&bits).all(|(v, &b)| (v - b as f64).abs() <= BIT_TOLERANCE);
    Ok(BitReadout { bits, expectations, a, b, product: a * b, valid: confident && a * b == omega })
}

fn site_label(site: SiteMode) -> String {
    match site {
        SiteMode::Mean => "mean".to_string(),
        SiteMode::Site(m) => m.to_string(),
    }
}

/// CSV with one row per order and one column per observable/site, in the
/// layout `order,d22_mean,dz_mean,...,truncated`.
pub fn error_table_csv(rows: &[(usize, Vec<ErrorSummary>)]) -> String {
    let mut out = String::from("order");
    if let Some((_, first)) = rows.first() {
        for s in first {
            let _ = write!(out, ",d{}_{}", s.observable.label(), site_label(s.site));
        }
        out.push_str(",truncated");
    }
    out.push('\n');
    for (order, summaries) in rows {
        let _ = write!(out, "{order}");
        for s in summaries {
            let _ = write!(out, ",{:e}", s.total);
        }
        let truncated = summaries.iter().any(|s| s.truncated);
        let _ = writeln!(out, ",{truncated}");
    }
    out
}
