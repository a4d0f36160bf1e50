//! Equations of motion for operator moments and the closure loop that turns
//! them into a finite ODE system at a given cumulant order.
//!
//! For an operator `O` the expectation value evolves as
//!
//! ```text
//! ∂ₜ⟨O⟩ = i⟨[H, O]⟩ + ½ Σᵢⱼ Γᵢⱼ ⟨2σ⁺ⱼ O σ⁻ᵢ − σ⁺ᵢσ⁻ⱼ O − O σ⁺ᵢσ⁻ⱼ⟩
//! ```
//!
//! with `H = Σ_h f_h(t) H_h` split over named time coefficients. Noise
//! operators have zero mean and never appear.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use ndarray::Array2;
use thiserror::Error;

use crate::cumulant::{expand_moment, CumulantError, Moment, MomentPolynomial};
use crate::opalg::{AlgebraError, OperatorSum, SiteOperator, Transition, C64};
use crate::parallel;

/// Name of the implicit always-on time coefficient.
pub const CONSTANT_HANDLE: &str = "1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EomError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Cumulant(#[from] CumulantError),
    #[error("closure order {order} outside 1..={n_sites}")]
    OrderOutOfRange { order: usize, n_sites: usize },
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("invalid initial state: {0}")]
    InvalidState(String),
    #[error("generated system is not closed: {0}")]
    NotClosed(String),
    #[error("cannot parse equation system (line {line}): {message}")]
    Parse { line: usize, message: String },
}

/// Scalar function of time multiplying a Hamiltonian part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant,
    /// 1 on `[start, end)`, 0 elsewhere.
    Window { start: f64, end: f64 },
    /// `1 − t/duration`
    RampDown { duration: f64 },
    /// `t/duration`
    RampUp { duration: f64 },
}

impl Schedule {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Schedule::Constant => 1.0,
            Schedule::Window { start, end } => {
                if t >= start && t < end {
                    1.0
                } else {
                    0.0
                }
            }
            Schedule::RampDown { duration } => 1.0 - t / duration,
            Schedule::RampUp { duration } => t / duration,
        }
    }

    /// Times at which the schedule is discontinuous.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Schedule::Window { start, end } => vec![start, end],
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Constant => write!(f, "constant"),
            Schedule::Window { start, end } => write!(f, "window {start} {end}"),
            Schedule::RampDown { duration } => write!(f, "ramp_down {duration}"),
            Schedule::RampUp { duration } => write!(f, "ramp_up {duration}"),
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let num = |i: usize| -> Result<f64, String> {
            parts.get(i).ok_or_else(|| format!("missing argument in schedule '{s}'"))?.parse().map_err(|e| format!("{e}"))
        };
        match parts.first().copied() {
            Some("constant") => Ok(Schedule::Constant),
            Some("window") => Ok(Schedule::Window { start: num(1)?, end: num(2)? }),
            Some("ramp_down") => Ok(Schedule::RampDown { duration: num(1)? }),
            Some("ramp_up") => Ok(Schedule::RampUp { duration: num(1)? }),
            _ => Err(format!("unknown schedule '{s}'")),
        }
    }
}

/// Collective decay channel with jump operators `σ⁻ᵢ` and a Hermitian rate
/// matrix `Γᵢⱼ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayChannel {
    pub rates: Array2<C64>,
}

/// A model: Hamiltonian parts with time coefficients plus dissipation.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub n_sites: usize,
    pub hamiltonian: Vec<(String, OperatorSum)>,
    pub dissipators: Vec<DecayChannel>,
    pub schedules: BTreeMap<String, Schedule>,
}

impl SystemSpec {
    pub fn new(n_sites: usize) -> Self {
        Self { n_sites, hamiltonian: Vec::new(), dissipators: Vec::new(), schedules: BTreeMap::new() }
    }

    pub fn with_term(mut self, handle: &str, op: OperatorSum) -> Self {
        self.hamiltonian.push((handle.to_string(), op));
        self
    }

    pub fn with_schedule(mut self, handle: &str, schedule: Schedule) -> Self {
        self.schedules.insert(handle.to_string(), schedule);
        self
    }

    pub fn with_decay(mut self, rates: Array2<C64>) -> Self {
        self.dissipators.push(DecayChannel { rates });
        self
    }

    pub fn is_closed(&self) -> bool {
        self.dissipators.is_empty()
    }

    pub fn schedule(&self, handle: &str) -> Schedule {
        if handle == CONSTANT_HANDLE {
            return Schedule::Constant;
        }
        self.schedules.get(handle).copied().unwrap_or(Schedule::Constant)
    }

    /// Sorted discontinuity times of all schedules.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.schedules.values().flat_map(Schedule::breakpoints).collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Hamiltonian at time `t`.
    pub fn hamiltonian_at(&self, t: f64) -> OperatorSum {
        let mut h = OperatorSum::zero(self.n_sites);
        for (handle, op) in &self.hamiltonian {
            h = h.add(&op.scale(C64::new(self.schedule(handle).value(t), 0.0))).expect("validated sizes");
        }
        h
    }

    pub fn validate(&self) -> Result<(), EomError> {
        if self.n_sites == 0 {
            return Err(EomError::InvalidSystem("system has no sites".into()));
        }
        for (handle, op) in &self.hamiltonian {
            if op.n_sites() != self.n_sites {
                return Err(EomError::InvalidSystem(format!(
                    "Hamiltonian part '{handle}' acts on {} sites, system has {}",
                    op.n_sites(),
                    self.n_sites
                )));
            }
            if handle != CONSTANT_HANDLE && !self.schedules.contains_key(handle) {
                return Err(EomError::InvalidSystem(format!("no schedule for handle '{handle}'")));
            }
        }
        for ch in &self.dissipators {
            let n = self.n_sites;
            if ch.rates.dim() != (n, n) {
                return Err(EomError::InvalidSystem(format!("rate matrix has shape {:?}, expected ({n}, {n})", ch.rates.dim())));
            }
            for i in 0..n {
                if ch.rates[[i, i]].re < 0.0 || ch.rates[[i, i]].im != 0.0 {
                    return Err(EomError::InvalidSystem(format!("rate Γ[{i},{i}] must be real and nonnegative")));
                }
                for j in 0..n {
                    if ch.rates[[i, j]] != ch.rates[[j, i]].conj() {
                        return Err(EomError::InvalidSystem(format!("rate matrix not Hermitian at ({i},{j})")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Canonical text description covering every coefficient; suitable for
    /// fingerprinting derivations.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sites {}", self.n_sites);
        for (h, sch) in &self.schedules {
            let _ = writeln!(s, "schedule {h} {sch}");
        }
        for (h, op) in &self.hamiltonian {
            let _ = writeln!(s, "hamiltonian {h} {op}");
        }
        for ch in &self.dissipators {
            let _ = write!(s, "decay");
            for v in ch.rates.iter() {
                let _ = write!(s, " {} {}", v.re, v.im);
            }
            let _ = writeln!(s);
        }
        s
    }
}

/// Exact, unclosed right-hand side of `d⟨m⟩/dt` grouped by time coefficient.
pub fn moment_rhs(m: &Moment, sys: &SystemSpec) -> Result<Vec<(String, OperatorSum)>, EomError> {
    let n = sys.n_sites;
    if let Some(op) = m.factors().iter().find(|op| op.site == 0 || op.site as usize > n) {
        return Err(AlgebraError::SiteOutOfRange { site: op.site as usize, n_sites: n }.into());
    }
    let o = OperatorSum::from_terms(n, [(C64::new(1.0, 0.0), m.factors().to_vec())])?;
    let mut parts: BTreeMap<String, OperatorSum> = BTreeMap::new();
    for (handle, h) in &sys.hamiltonian {
        let acc = parts.entry(handle.clone()).or_insert_with(|| OperatorSum::zero(n));
        h.multiply_into(&o, C64::new(0.0, 1.0), acc);
        o.multiply_into(h, C64::new(0.0, -1.0), acc);
    }
    if !sys.dissipators.is_empty() {
        let raise: Vec<OperatorSum> = (1..=n).map(|s| OperatorSum::sigma_plus(n, s)).collect();
        let lower: Vec<OperatorSum> = (1..=n).map(|s| OperatorSum::sigma_minus(n, s)).collect();
        let acc = parts.entry(CONSTANT_HANDLE.to_string()).or_insert_with(|| OperatorSum::zero(n));
        for ch in &sys.dissipators {
            for i in 0..n {
                for j in 0..n {
                    let g = ch.rates[[i, j]];
                    if g == C64::default() {
                        continue;
                    }
                    // σ⁺ⱼ O σ⁻ᵢ
                    let left = raise[j].multiply(&o)?;
                    left.multiply_into(&lower[i], g, acc);
                    // −½ {σ⁺ᵢσ⁻ⱼ, O}
                    let hop = raise[i].multiply(&lower[j])?;
                    hop.multiply_into(&o, -0.5 * g, acc);
                    o.multiply_into(&hop, -0.5 * g, acc);
                }
            }
        }
    }
    Ok(parts.into_iter().filter(|(_, s)| !s.is_zero()).collect())
}

/// Counts reported alongside a generated system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationStats {
    /// `Σ_{k=1}^{o} C(N,k)·3^k`
    pub upper_bound: usize,
    pub variables: usize,
    pub closures: usize,
    /// Variables left after pairing each with its conjugate.
    pub reduced: usize,
}

/// Upper bound on variable count at order `o` for `N` sites.
pub fn variable_upper_bound(n_sites: usize, order: usize) -> usize {
    let mut total = 0usize;
    let mut binom = 1usize;
    let mut pow3 = 1usize;
    for k in 1..=order.min(n_sites) {
        binom = binom * (n_sites - k + 1) / k;
        pow3 *= 3;
        total += binom * pow3;
    }
    total
}

/// Closed ODE system over moment variables.
///
/// Right-hand sides are linear in variables and in *closure moments*:
/// moments above the closure order that were replaced by their cumulant
/// expansion. Each closure's polynomial references variables only, so the
/// system is closed; [`MomentODESystem::expanded_rhs`] substitutes them.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentODESystem {
    pub n_sites: usize,
    pub order: usize,
    pub variables: Vec<Moment>,
    pub closures: Vec<(Moment, MomentPolynomial)>,
    /// Per variable: `(handle, polynomial)` parts.
    pub rhs: Vec<Vec<(String, MomentPolynomial)>>,
    pub schedules: BTreeMap<String, Schedule>,
    /// Index of each variable's conjugate partner.
    pub conjugate_map: Vec<usize>,
}

/// Derivation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GenerateOptions {
    /// Worker threads for per-variable derivation (0 = ambient pool).
    pub workers: usize,
}

/// Seed moments: `σ⁺`, `σ⁻`, `σ²²` on every site.
pub fn seed_moments(n_sites: usize) -> Vec<Moment> {
    (1..=n_sites)
        .flat_map(|s| Transition::ALL.into_iter().map(move |k| Moment::from_canonical(vec![SiteOperator::new(s, k)])))
        .collect()
}

pub fn generate_closed_system(sys: &SystemSpec, order: usize) -> Result<MomentODESystem, EomError> {
    generate_closed_system_with(sys, order, GenerateOptions::default())
}

pub fn generate_closed_system_with(
    sys: &SystemSpec,
    order: usize,
    options: GenerateOptions,
) -> Result<MomentODESystem, EomError> {
    sys.validate()?;
    let n = sys.n_sites;
    if order == 0 || order > n {
        return Err(EomError::OrderOutOfRange { order, n_sites: n });
    }
    let mut known: BTreeSet<Moment> = BTreeSet::new();
    let mut raw: BTreeMap<Moment, Vec<(String, OperatorSum)>> = BTreeMap::new();
    let mut closures: BTreeMap<Moment, MomentPolynomial> = BTreeMap::new();
    let mut frontier = seed_moments(n);
    known.extend(frontier.iter().cloned());

    while !frontier.is_empty() {
        let derived = parallel::map(&frontier, options.workers, |m| moment_rhs(m, sys));
        let mut next = Vec::new();
        for (m, parts) in frontier.iter().zip(derived) {
            let parts = parts?;
            for (_, sum) in &parts {
                for (factors, _) in sum.iter() {
                    let k = factors.len();
                    if k == 0 {
                        continue;
                    }
                    let mom = Moment::from_canonical(factors.clone());
                    if k <= order {
                        if known.insert(mom.clone()) {
                            next.push(mom);
                        }
                    } else if !closures.contains_key(&mom) {
                        let poly = expand_moment(&mom, order)?;
                        for sub in poly.moments() {
                            if known.insert(sub.clone()) {
                                next.push(sub.clone());
                            }
                        }
                        closures.insert(mom, poly);
                    }
                }
            }
            raw.insert(m.clone(), parts);
        }
        frontier = next;
    }

    let mut variables: Vec<Moment> = known.into_iter().collect();
    variables.sort_by(|a, b| a.order().cmp(&b.order()).then_with(|| a.cmp(b)));
    let position: BTreeMap<&Moment, usize> = variables.iter().enumerate().map(|(i, m)| (m, i)).collect();

    let mut conjugate_map = Vec::with_capacity(variables.len());
    for v in &variables {
        let adj = v.adjoint();
        let j = position
            .get(&adj)
            .ok_or_else(|| EomError::NotClosed(format!("conjugate of <{v}> is not a variable")))?;
        conjugate_map.push(*j);
    }

    let rhs: Vec<Vec<(String, MomentPolynomial)>> = variables
        .iter()
        .map(|v| {
            raw[v]
                .iter()
                .map(|(handle, sum)| {
                    let mut p = MomentPolynomial::zero();
                    for (factors, c) in sum.iter() {
                        p.add_monomial(vec![Moment::from_canonical(factors.clone())], *c);
                    }
                    (handle.clone(), p)
                })
                .collect()
        })
        .collect();

    let system = MomentODESystem {
        n_sites: n,
        order,
        variables,
        closures: closures.into_iter().collect(),
        rhs,
        schedules: sys.schedules.clone(),
        conjugate_map,
    };
    system.check_closed()?;
    let stats = system.stats();
    log::debug!(
        "derived N={n} o={order}: {} variables (bound {}), {} closures",
        stats.variables,
        stats.upper_bound,
        stats.closures
    );
    Ok(system)
}

impl MomentODESystem {
    pub fn stats(&self) -> GenerationStats {
        let reduced = (0..self.variables.len()).filter(|&i| self.conjugate_map[i] >= i).count();
        GenerationStats {
            upper_bound: variable_upper_bound(self.n_sites, self.order),
            variables: self.variables.len(),
            closures: self.closures.len(),
            reduced,
        }
    }

    pub fn index_of(&self, m: &Moment) -> Option<usize> {
        let key = (m.order(), m);
        self.variables.binary_search_by(|v| (v.order(), v).cmp(&key)).ok()
    }

    /// Index of the first-order variable `kind` on `site`.
    pub fn site_variable(&self, site: usize, kind: Transition) -> Option<usize> {
        self.index_of(&Moment::from_canonical(vec![SiteOperator::new(site, kind)]))
    }

    /// Structural closedness check.
    pub fn check_closed(&self) -> Result<(), EomError> {
        let vars: BTreeSet<&Moment> = self.variables.iter().collect();
        let closed: BTreeSet<&Moment> = self.closures.iter().map(|(m, _)| m).collect();
        for (m, poly) in &self.closures {
            if m.order() <= self.order {
                return Err(EomError::NotClosed(format!("closure <{m}> is within the closure order")));
            }
            if let Some(bad) = poly.moments().find(|x| !vars.contains(x)) {
                return Err(EomError::NotClosed(format!("closure of <{m}> references <{bad}>")));
            }
        }
        if self.rhs.len() != self.variables.len() {
            return Err(EomError::NotClosed("rhs count differs from variable count".into()));
        }
        for (v, parts) in self.variables.iter().zip(&self.rhs) {
            for (handle, poly) in parts {
                if handle != CONSTANT_HANDLE && !self.schedules.contains_key(handle) {
                    return Err(EomError::NotClosed(format!("rhs of <{v}> uses unknown handle '{handle}'")));
                }
                if let Some(bad) = poly.moments().find(|x| !vars.contains(x) && !closed.contains(x)) {
                    return Err(EomError::NotClosed(format!("rhs of <{v}> references undeclared <{bad}>")));
                }
            }
        }
        Ok(())
    }

    /// Right-hand side of variable `i` with closures substituted, i.e. a
    /// polynomial in variables only.
    pub fn expanded_rhs(&self, i: usize) -> Vec<(String, MomentPolynomial)> {
        let closures: BTreeMap<&Moment, &MomentPolynomial> = self.closures.iter().map(|(m, p)| (m, p)).collect();
        self.rhs[i]
            .iter()
            .map(|(h, p)| (h.clone(), p.substitute(|m| closures.get(m).map(|q| (*q).clone()))))
            .collect()
    }

    /// Versioned text serialization (see [`MomentODESystem::from_text`]).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "cumulant-eom 1");
        let _ = writeln!(s, "sites {}", self.n_sites);
        let _ = writeln!(s, "order {}", self.order);
        for (h, sch) in &self.schedules {
            let _ = writeln!(s, "schedule {h} {sch}");
        }
        let _ = writeln!(s, "variables {}", self.variables.len());
        for v in &self.variables {
            let _ = writeln!(s, "{v}");
        }
        let _ = writeln!(s, "closures {}", self.closures.len());
        for (m, p) in &self.closures {
            let _ = writeln!(s, "{m} = {p}");
        }
        let _ = writeln!(s, "rhs");
        for (i, parts) in self.rhs.iter().enumerate() {
            for (h, p) in parts {
                let _ = writeln!(s, "{i} {h} {p}");
            }
        }
        let _ = writeln!(s, "end");
        s
    }

    /// Parses the output of [`MomentODESystem::to_text`]. The format is line
    /// based:
    ///
    /// ```text
    /// cumulant-eom 1
    /// sites <N>
    /// order <o>
    /// schedule <handle> <constant | window a b | ramp_down T | ramp_up T>   (any number)
    /// variables <count>
    /// <moment>                                  (one per line, e.g. sp[1]·s22[2])
    /// closures <count>
    /// <moment> = <polynomial>
    /// rhs
    /// <variable index> <handle> <polynomial>
    /// end
    /// ```
    ///
    /// Polynomials use the `Display` format of [`MomentPolynomial`], e.g.
    /// `(1+0i)·<sp[1]>·<sm[2]> + (-0.5+0i)`.
    pub fn from_text(text: &str) -> Result<Self, EomError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let mut next = |what: &str| -> Result<(usize, &str), EomError> {
            lines.next().ok_or_else(|| EomError::Parse { line: 0, message: format!("unexpected end, expected {what}") })
        };
        let perr = |line: usize, message: String| EomError::Parse { line, message };

        let (l, header) = next("header")?;
        if header != "cumulant-eom 1" {
            return Err(perr(l, format!("unsupported header '{header}'")));
        }
        let field = |(l, s): (usize, &str), key: &str| -> Result<usize, EomError> {
            s.strip_prefix(key)
                .and_then(|r| r.trim().parse().ok())
                .ok_or_else(|| perr(l, format!("expected '{key} <n>'")))
        };
        let n_sites = field(next("sites")?, "sites")?;
        let order = field(next("order")?, "order")?;
        let mut schedules = BTreeMap::new();
        let mut line = next("variables")?;
        while let Some(rest) = line.1.strip_prefix("schedule ") {
            let (h, sch) = rest.split_once(' ').ok_or_else(|| perr(line.0, "bad schedule".into()))?;
            schedules.insert(h.to_string(), sch.parse::<Schedule>().map_err(|e| perr(line.0, e))?);
            line = next("variables")?;
        }
        let n_vars = field(line, "variables")?;
        let mut variables = Vec::with_capacity(n_vars);
        for _ in 0..n_vars {
            let (l, s) = next("variable")?;
            variables.push(parse_moment(s).map_err(|e| perr(l, e))?);
        }
        let n_closures = field(next("closures")?, "closures")?;
        let mut closures = Vec::with_capacity(n_closures);
        for _ in 0..n_closures {
            let (l, s) = next("closure")?;
            let (m, p) = s.split_once(" = ").ok_or_else(|| perr(l, "expected '<moment> = <poly>'".into()))?;
            closures.push((parse_moment(m).map_err(|e| perr(l, e))?, parse_polynomial(p).map_err(|e| perr(l, e))?));
        }
        let (l, s) = next("rhs")?;
        if s != "rhs" {
            return Err(perr(l, "expected 'rhs'".into()));
        }
        let mut rhs = vec![Vec::new(); n_vars];
        loop {
            let (l, s) = next("rhs entry or end")?;
            if s == "end" {
                break;
            }
            let mut it = s.splitn(3, ' ');
            let idx: usize = it.next().and_then(|x| x.parse().ok()).ok_or_else(|| perr(l, "bad variable index".into()))?;
            let handle = it.next().ok_or_else(|| perr(l, "missing handle".into()))?;
            let poly = parse_polynomial(it.next().unwrap_or("0")).map_err(|e| perr(l, e))?;
            rhs.get_mut(idx).ok_or_else(|| perr(l, "variable index out of range".into()))?.push((handle.to_string(), poly));
        }
        let position: BTreeMap<&Moment, usize> = variables.iter().enumerate().map(|(i, m)| (m, i)).collect();
        let conjugate_map = variables
            .iter()
            .map(|v| position.get(&v.adjoint()).copied().ok_or_else(|| EomError::NotClosed(format!("conjugate of <{v}> missing"))))
            .collect::<Result<Vec<_>, _>>()?;
        let system = MomentODESystem { n_sites, order, variables, closures, rhs, schedules, conjugate_map };
        system.check_closed()?;
        Ok(system)
    }
}

fn parse_moment(s: &str) -> Result<Moment, String> {
    if s == "I" {
        return Ok(Moment::from_canonical(Vec::new()));
    }
    let mut factors = Vec::new();
    for f in s.split('·') {
        let (label, rest) = f.split_once('[').ok_or_else(|| format!("bad factor '{f}'"))?;
        let site: usize = rest.strip_suffix(']').and_then(|x| x.parse().ok()).ok_or_else(|| format!("bad site in '{f}'"))?;
        let kind = Transition::from_label(label).ok_or_else(|| format!("unknown operator '{label}'"))?;
        factors.push(SiteOperator::new(site, kind));
    }
    Moment::new(factors).map_err(|e| e.to_string())
}

pub(crate) fn parse_complex(s: &str) -> Result<C64, String> {
    let inner = s
        .strip_prefix('(')
        .and_then(|x| x.strip_suffix("i)"))
        .ok_or_else(|| format!("bad complex '{s}'"))?;
    let split = inner
        .char_indices()
        .skip(1)
        .filter(|(i, c)| (*c == '+' || *c == '-') && !matches!(inner.as_bytes()[i - 1], b'e' | b'E'))
        .map(|(i, _)| i)
        .last()
        .ok_or_else(|| format!("bad complex '{s}'"))?;
    let re: f64 = inner[..split].parse().map_err(|_| format!("bad real part in '{s}'"))?;
    let im: f64 = inner[split..].parse().map_err(|_| format!("bad imaginary part in '{s}'"))?;
    Ok(C64::new(re, im))
}

fn parse_polynomial(s: &str) -> Result<MomentPolynomial, String> {
    let mut p = MomentPolynomial::zero();
    if s == "0" {
        return Ok(p);
    }
    for mono in s.split(" + ") {
        let mut parts = mono.split("·<");
        let c = parse_complex(parts.next().ok_or("empty monomial")?)?;
        let mut moments = Vec::new();
        for m in parts {
            moments.push(parse_moment(m.strip_suffix('>').ok_or_else(|| format!("bad moment '{m}'"))?)?);
        }
        p.add_monomial(moments, c);
    }
    Ok(p)
}

/// Tensor product of single-site pure states, amplitudes `[ground, excited]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductState {
    pub sites: Vec<[C64; 2]>,
}

impl ProductState {
    pub fn uniform(n: usize, amplitudes: [C64; 2]) -> Self {
        Self { sites: vec![amplitudes; n] }
    }

    pub fn all_ground(n: usize) -> Self {
        Self::uniform(n, [C64::new(1.0, 0.0), C64::default()])
    }

    pub fn all_excited(n: usize) -> Self {
        Self::uniform(n, [C64::default(), C64::new(1.0, 0.0)])
    }

    /// `|+⟩ = (|g⟩ + |e⟩)/√2` on every site.
    pub fn all_plus(n: usize) -> Self {
        let a = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self::uniform(n, [a, a])
    }

    pub fn validate(&self) -> Result<(), EomError> {
        for (i, [g, e]) in self.sites.iter().enumerate() {
            let norm = g.norm_sqr() + e.norm_sqr();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(EomError::InvalidState(format!("site {} has norm² {norm}", i + 1)));
            }
        }
        Ok(())
    }

    /// `⟨ψ|σᵃᵇ|ψ⟩ = conj(ψ_a) ψ_b` on one site.
    pub fn site_expectation(&self, op: SiteOperator) -> C64 {
        let amp = self.sites[op.site as usize - 1];
        let (a, b) = op.kind.levels();
        amp[a as usize - 1].conj() * amp[b as usize - 1]
    }

    /// Full state vector, basis index bit `m−1` set when site `m` is excited.
    pub fn state_vector(&self) -> Vec<C64> {
        let n = self.sites.len();
        (0..1usize << n)
            .map(|idx| (0..n).map(|m| self.sites[m][(idx >> m) & 1]).product())
            .collect()
    }
}

/// Expectation of every variable in a product state.
pub fn initial_moments(state: &ProductState, variables: &[Moment]) -> Result<Vec<C64>, EomError> {
    state.validate()?;
    variables
        .iter()
        .map(|v| {
            if let Some(op) = v.factors().iter().find(|op| op.site == 0 || op.site as usize > state.sites.len()) {
                return Err(EomError::InvalidState(format!("state has no site {}", op.site)));
            }
            Ok(v.factors().iter().map(|&op| state.site_expectation(op)).product())
        })
        .collect()
}

/// Flattened, index-based form of a [`MomentODESystem`] for repeated RHS
/// evaluation. With conjugate reduction only one variable of each
/// `(v, v*)` pair is part of the state.
#[derive(Debug, Clone)]
pub struct CompiledSystem {
    n_vars: usize,
    /// Variable indices making up the integrated state.
    state_vars: Vec<usize>,
    /// For every variable: state slot and whether it is conjugated.
    source: Vec<(usize, bool)>,
    self_adjoint: Vec<bool>,
    schedules: Vec<Schedule>,
    closure_offsets: Vec<usize>,
    closure_terms: Vec<(C64, usize, usize)>,
    closure_vars: Vec<usize>,
    row_offsets: Vec<usize>,
    /// `(coefficient, handle, slot)`; slot `< n_vars` is a variable, then
    /// closures, and `usize::MAX` is the constant 1.
    entries: Vec<(C64, usize, usize)>,
    reduce: bool,
}

impl CompiledSystem {
    pub fn new(sys: &MomentODESystem, conjugate_reduction: bool) -> Self {
        let n_vars = sys.variables.len();
        let mut handles: Vec<String> = vec![CONSTANT_HANDLE.to_string()];
        handles.extend(sys.schedules.keys().filter(|h| h.as_str() != CONSTANT_HANDLE).cloned());
        let schedules: Vec<Schedule> = handles
            .iter()
            .map(|h| if h == CONSTANT_HANDLE { Schedule::Constant } else { sys.schedules[h] })
            .collect();
        let handle_index: BTreeMap<&str, usize> = handles.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();

        let mut state_vars = Vec::new();
        let mut source = vec![(0usize, false); n_vars];
        for i in 0..n_vars {
            let j = sys.conjugate_map[i];
            if !conjugate_reduction || j >= i {
                source[i] = (state_vars.len(), false);
                state_vars.push(i);
            }
        }
        if conjugate_reduction {
            for i in 0..n_vars {
                let j = sys.conjugate_map[i];
                if j < i {
                    source[i] = (source[j].0, true);
                }
            }
        }
        let self_adjoint = (0..n_vars).map(|i| sys.conjugate_map[i] == i).collect();

        let mut slot_of: BTreeMap<&Moment, usize> = sys.variables.iter().enumerate().map(|(i, m)| (m, i)).collect();
        for (k, (m, _)) in sys.closures.iter().enumerate() {
            slot_of.insert(m, n_vars + k);
        }

        let mut closure_offsets = vec![0];
        let mut closure_terms = Vec::new();
        let mut closure_vars = Vec::new();
        for (_, poly) in &sys.closures {
            for (mono, c) in poly.terms() {
                let start = closure_vars.len();
                closure_vars.extend(mono.iter().map(|m| slot_of[m]));
                closure_terms.push((*c, start, closure_vars.len()));
            }
            closure_offsets.push(closure_terms.len());
        }

        let mut row_offsets = vec![0];
        let mut entries = Vec::new();
        for &v in &state_vars {
            for (h, poly) in &sys.rhs[v] {
                let hi = handle_index[h.as_str()];
                for (mono, c) in poly.terms() {
                    let slot = match mono.as_slice() {
                        [] => usize::MAX,
                        [m] => slot_of[m],
                        _ => unreachable!("rhs monomials are linear"),
                    };
                    entries.push((*c, hi, slot));
                }
            }
            row_offsets.push(entries.len());
        }

        Self {
            n_vars,
            state_vars,
            source,
            self_adjoint,
            schedules,
            closure_offsets,
            closure_terms,
            closure_vars,
            row_offsets,
            entries,
            reduce: conjugate_reduction,
        }
    }

    /// Length of the integrated state vector.
    pub fn state_len(&self) -> usize {
        self.state_vars.len()
    }

    /// Packs full variable values into the integrated state.
    pub fn pack(&self, full: &[C64]) -> Vec<C64> {
        self.state_vars.iter().map(|&v| full[v]).collect()
    }

    /// Value of variable `var` given the integrated state.
    pub fn variable(&self, state: &[C64], var: usize) -> C64 {
        let (slot, conj) = self.source[var];
        if conj {
            state[slot].conj()
        } else {
            state[slot]
        }
    }

    /// Every variable's value, followed by every closure moment's value.
    pub fn unpack_into(&self, state: &[C64], values: &mut Vec<C64>) {
        values.clear();
        values.extend((0..self.n_vars).map(|v| self.variable(state, v)));
        for k in 0..self.closure_offsets.len() - 1 {
            let mut acc = C64::default();
            for &(c, a, b) in &self.closure_terms[self.closure_offsets[k]..self.closure_offsets[k + 1]] {
                let mut term = c;
                for &s in &self.closure_vars[a..b] {
                    term *= values[s];
                }
                acc += term;
            }
            values.push(acc);
        }
    }

    /// Evaluates `d(state)/dt` at time `t`. `scratch` is reused between calls.
    pub fn eval(&self, t: f64, state: &[C64], out: &mut [C64], scratch: &mut Vec<C64>) {
        let hv: Vec<f64> = self.schedules.iter().map(|s| s.value(t)).collect();
        self.unpack_into(state, scratch);
        for (row, &v) in self.state_vars.iter().enumerate() {
            let mut acc = C64::default();
            for &(c, h, slot) in &self.entries[self.row_offsets[row]..self.row_offsets[row + 1]] {
                let x = if slot == usize::MAX { C64::new(1.0, 0.0) } else { scratch[slot] };
                acc += c * x * hv[h];
            }
            if self.reduce && self.self_adjoint[v] {
                acc.im = 0.0;
            }
            out[row] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn m(site: usize, kind: Transition) -> Moment {
        Moment::new(vec![SiteOperator::new(site, kind)]).unwrap()
    }

    fn single(parts: Vec<(String, OperatorSum)>) -> OperatorSum {
        let mut out = OperatorSum::zero(parts.first().map(|p| p.1.n_sites()).unwrap_or(1));
        for (_, s) in parts {
            out = out.add(&s).unwrap();
        }
        out
    }

    #[test]
    fn free_precession() {
        let w0 = 1.7;
        let sys = SystemSpec::new(1).with_term("1", OperatorSum::sigma_22(1, 1).scale(c(w0, 0.0)));
        let r = single(moment_rhs(&m(1, Transition::Lower), &sys).unwrap());
        assert_eq!(r, OperatorSum::sigma_minus(1, 1).scale(c(0.0, -w0)));
    }

    #[test]
    fn spontaneous_decay() {
        let sys = SystemSpec::new(1).with_decay(arr2(&[[c(1.0, 0.0)]]));
        let r = single(moment_rhs(&m(1, Transition::Excited), &sys).unwrap());
        assert_eq!(r, OperatorSum::sigma_22(1, 1).scale(c(-1.0, 0.0)));
    }

    #[test]
    fn driven_damped_coherence() {
        let (w0, g, eta) = (0.3, 1.0, 2.0);
        let sys = SystemSpec::new(1)
            .with_term("1", OperatorSum::sigma_22(1, 1).scale(c(w0, 0.0)))
            .with_term("1", OperatorSum::sigma_x(1, 1).scale(c(eta, 0.0)))
            .with_decay(arr2(&[[c(g, 0.0)]]));
        let r = single(moment_rhs(&m(1, Transition::Lower), &sys).unwrap());
        let expected = OperatorSum::sigma_minus(1, 1)
            .scale(c(-g / 2.0, -w0))
            .add(&OperatorSum::sigma_z(1, 1).scale(c(0.0, eta)))
            .unwrap();
        assert_eq!(r.len(), expected.len());
        for t in expected.terms() {
            let got = r.coefficient(&t.factors);
            assert!((got - t.coefficient).norm() < 1e-15, "{r} vs {expected}");
        }
    }

    #[test]
    fn single_site_system_has_three_variables() {
        let sys = SystemSpec::new(1)
            .with_term("1", OperatorSum::sigma_x(1, 1).scale(c(2.0, 0.0)))
            .with_decay(arr2(&[[c(1.0, 0.0)]]));
        let s = generate_closed_system(&sys, 1).unwrap();
        assert_eq!(s.variables.len(), 3);
        assert!(s.closures.is_empty());
        assert_eq!(s.stats().reduced, 2);
        assert_eq!(s.stats().upper_bound, 3);
    }

    #[test]
    fn order_bounds() {
        let sys = SystemSpec::new(2);
        assert!(matches!(generate_closed_system(&sys, 0), Err(EomError::OrderOutOfRange { .. })));
        assert!(matches!(generate_closed_system(&sys, 3), Err(EomError::OrderOutOfRange { .. })));
    }

    #[test]
    fn upper_bound_formula() {
        assert_eq!(variable_upper_bound(5, 2), 105);
        assert_eq!(variable_upper_bound(3, 3), 63);
        assert_eq!(variable_upper_bound(1, 1), 3);
    }

    #[test]
    fn initial_moment_examples() {
        let vars = vec![
            m(1, Transition::Excited),
            m(1, Transition::Raise),
            Moment::new(vec![SiteOperator::new(1, Transition::Excited), SiteOperator::new(2, Transition::Excited)]).unwrap(),
        ];
        let g = initial_moments(&ProductState::all_ground(2), &vars).unwrap();
        assert!(g.iter().all(|x| x.norm() == 0.0));
        let p = initial_moments(&ProductState::all_plus(2), &vars).unwrap();
        assert!((p[0] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((p[1] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((p[2] - c(0.25, 0.0)).norm() < 1e-15);
        let bad = ProductState::uniform(2, [c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(initial_moments(&bad, &vars), Err(EomError::InvalidState(_))));
    }

    #[test]
    fn invalid_systems_rejected() {
        let sys = SystemSpec::new(2).with_term("drive", OperatorSum::sigma_x(2, 1));
        assert!(sys.validate().is_err());
        let sys = SystemSpec::new(2).with_decay(arr2(&[[c(1.0, 0.0), c(0.2, 0.0)], [c(0.3, 0.0), c(1.0, 0.0)]]));
        assert!(sys.validate().is_err());
        let sys = SystemSpec::new(2).with_term("1", OperatorSum::sigma_x(3, 1));
        assert!(sys.validate().is_err());
    }

    #[test]
    fn schedule_text_round_trip() {
        for s in [
            Schedule::Constant,
            Schedule::Window { start: 0.0, end: 5.0 },
            Schedule::RampDown { duration: 10.0 },
            Schedule::RampUp { duration: 2.5 },
        ] {
            assert_eq!(s.to_string().parse::<Schedule>().unwrap(), s);
        }
        let w = Schedule::Window { start: 0.0, end: 5.0 };
        assert_eq!(w.value(5.0 - 1e-12), 1.0);
        assert_eq!(w.value(5.0), 0.0);
    }

    #[test]
    fn complex_parsing() {
        assert_eq!(parse_complex("(0.5+0i)").unwrap(), c(0.5, 0.0));
        assert_eq!(parse_complex("(-0.5-2i)").unwrap(), c(-0.5, -2.0));
        assert_eq!(parse_complex("(1e-5-3e-7i)").unwrap(), c(1e-5, -3e-7));
        assert!(parse_complex("0.5").is_err());
    }
}
