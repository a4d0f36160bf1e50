//! Symbolic algebra of transition operators on `N` two-level sites.
//!
//! Every site carries the basis `{𝟙, σ⁺, σ⁻, σ²²}`. A product of operators is
//! kept in canonical form: factors sorted by site, at most one factor per
//! site. Same-site products are contracted with `σᵃᵇσᶜᵈ = δ_bc σᵃᵈ`, and the
//! ground projector `σ¹¹` is rewritten as `𝟙 − σ²²`.
//!
//! # Text rendering
//!
//! `Display` for [`OperatorSum`] prints terms in canonical order, joined by
//! `" + "`. Each term is `(re±imi)` followed by `·`-separated factors, where a
//! factor is `sp[m]` (σ⁺), `sm[m]` (σ⁻) or `s22[m]` (σ²²) with 1-based site
//! `m`. The identity term prints as `(c)·I`, the empty sum as `0`:
//!
//! ```text
//! (0.5+0i)·s22[1]·sp[2] + (-1+0i)·I
//! ```

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("operands act on different systems ({left} vs {right} sites)")]
    SizeMismatch { left: usize, right: usize },
    #[error("site {site} out of range for a {n_sites}-site system")]
    SiteOutOfRange { site: usize, n_sites: usize },
}

/// Single-site transition operator `σᵃᵇ = |a⟩⟨b|` with `a, b ∈ {1, 2}`,
/// excluding `σ¹¹` which is never stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Transition {
    /// σ⁺ = σ²¹
    Raise,
    /// σ⁻ = σ¹²
    Lower,
    /// σ²²
    Excited,
}

impl Transition {
    pub const ALL: [Transition; 3] = [Transition::Raise, Transition::Lower, Transition::Excited];

    /// `(a, b)` levels of `|a⟩⟨b|`.
    pub fn levels(self) -> (u8, u8) {
        match self {
            Transition::Raise => (2, 1),
            Transition::Lower => (1, 2),
            Transition::Excited => (2, 2),
        }
    }

    pub fn adjoint(self) -> Transition {
        match self {
            Transition::Raise => Transition::Lower,
            Transition::Lower => Transition::Raise,
            Transition::Excited => Transition::Excited,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Transition::Raise => "sp",
            Transition::Lower => "sm",
            Transition::Excited => "s22",
        }
    }

    pub fn from_label(label: &str) -> Option<Transition> {
        match label {
            "sp" => Some(Transition::Raise),
            "sm" => Some(Transition::Lower),
            "s22" => Some(Transition::Excited),
            _ => None,
        }
    }
}

/// Result of contracting two transition operators on the same site.
enum Contraction {
    Zero,
    Op(Transition),
    /// σ¹¹ = 𝟙 − σ²²
    Ground,
}

fn contract(left: Transition, right: Transition) -> Contraction {
    let (a, b) = left.levels();
    let (c, d) = right.levels();
    if b != c {
        return Contraction::Zero;
    }
    match (a, d) {
        (2, 1) => Contraction::Op(Transition::Raise),
        (1, 2) => Contraction::Op(Transition::Lower),
        (2, 2) => Contraction::Op(Transition::Excited),
        _ => Contraction::Ground,
    }
}

/// A transition operator acting on a 1-based site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SiteOperator {
    pub site: u16,
    pub kind: Transition,
}

impl SiteOperator {
    pub fn new(site: usize, kind: Transition) -> Self {
        Self { site: site as u16, kind }
    }

    pub fn adjoint(self) -> Self {
        Self { site: self.site, kind: self.kind.adjoint() }
    }
}

impl fmt::Display for SiteOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.kind.label(), self.site)
    }
}

/// Sorted factor list with one factor per site.
pub type Factors = Vec<SiteOperator>;

/// Multiplies two canonical factor lists. Each output entry is a `±1` sign
/// with its canonical factor list; the list is empty when the product vanishes.
pub fn multiply_factors(left: &[SiteOperator], right: &[SiteOperator]) -> Vec<(f64, Factors)> {
    let mut partial: Vec<(f64, Factors)> = vec![(1.0, Vec::with_capacity(left.len() + right.len()))];
    let (mut i, mut j) = (0, 0);
    while i < left.len() || j < right.len() {
        let take_left = j >= right.len() || (i < left.len() && left[i].site < right[j].site);
        let take_right = i >= left.len() || (j < right.len() && right[j].site < left[i].site);
        if take_left {
            for (_, f) in partial.iter_mut() {
                f.push(left[i]);
            }
            i += 1;
        } else if take_right {
            for (_, f) in partial.iter_mut() {
                f.push(right[j]);
            }
            j += 1;
        } else {
            let site = left[i].site;
            match contract(left[i].kind, right[j].kind) {
                Contraction::Zero => return Vec::new(),
                Contraction::Op(kind) => {
                    for (_, f) in partial.iter_mut() {
                        f.push(SiteOperator { site, kind });
                    }
                }
                Contraction::Ground => {
                    let mut excited = partial.clone();
                    for (sign, f) in excited.iter_mut() {
                        *sign = -*sign;
                        f.push(SiteOperator { site, kind: Transition::Excited });
                    }
                    partial.extend(excited);
                }
            }
            i += 1;
            j += 1;
        }
    }
    partial
}

/// A coefficient times a canonical operator product.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorTerm {
    pub coefficient: C64,
    pub factors: Factors,
}

impl OperatorTerm {
    /// Number of factors; zero means a multiple of the identity.
    pub fn order(&self) -> usize {
        self.factors.len()
    }
}

/// Linear combination of canonical operator products on an `N`-site system.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSum {
    n_sites: usize,
    terms: BTreeMap<Factors, C64>,
}

impl OperatorSum {
    pub fn zero(n_sites: usize) -> Self {
        Self { n_sites, terms: BTreeMap::new() }
    }

    pub fn identity(n_sites: usize) -> Self {
        Self::scalar(n_sites, C64::new(1.0, 0.0))
    }

    pub fn scalar(n_sites: usize, value: C64) -> Self {
        let mut out = Self::zero(n_sites);
        out.add_term(Vec::new(), value);
        out
    }

    /// Single-factor operator. Panics if `site` is outside `1..=n_sites`;
    /// use [`OperatorSum::try_single`] for a checked version.
    pub fn single(n_sites: usize, site: usize, kind: Transition) -> Self {
        Self::try_single(n_sites, site, kind).expect("site out of range")
    }

    pub fn try_single(n_sites: usize, site: usize, kind: Transition) -> Result<Self, AlgebraError> {
        if site == 0 || site > n_sites {
            return Err(AlgebraError::SiteOutOfRange { site, n_sites });
        }
        let mut out = Self::zero(n_sites);
        out.add_term(vec![SiteOperator::new(site, kind)], C64::new(1.0, 0.0));
        Ok(out)
    }

    pub fn sigma_plus(n_sites: usize, site: usize) -> Self {
        Self::single(n_sites, site, Transition::Raise)
    }

    pub fn sigma_minus(n_sites: usize, site: usize) -> Self {
        Self::single(n_sites, site, Transition::Lower)
    }

    pub fn sigma_22(n_sites: usize, site: usize) -> Self {
        Self::single(n_sites, site, Transition::Excited)
    }

    /// σˣ = σ⁺ + σ⁻
    pub fn sigma_x(n_sites: usize, site: usize) -> Self {
        let mut out = Self::sigma_plus(n_sites, site);
        out.add_term(vec![SiteOperator::new(site, Transition::Lower)], C64::new(1.0, 0.0));
        out
    }

    /// σᶻ = 2σ²² − 𝟙
    pub fn sigma_z(n_sites: usize, site: usize) -> Self {
        let mut out = Self::zero(n_sites);
        out.add_term(vec![SiteOperator::new(site, Transition::Excited)], C64::new(2.0, 0.0));
        out.add_term(Vec::new(), C64::new(-1.0, 0.0));
        out
    }

    /// Builds a sum from raw terms. Factors need not be sorted or
    /// site-unique; they are multiplied out left to right.
    pub fn from_terms<I>(n_sites: usize, terms: I) -> Result<Self, AlgebraError>
    where
        I: IntoIterator<Item = (C64, Vec<SiteOperator>)>,
    {
        let mut out = Self::zero(n_sites);
        for (coefficient, factors) in terms {
            let mut product: Vec<(f64, Factors)> = vec![(1.0, Vec::new())];
            for op in factors {
                let site = op.site as usize;
                if site == 0 || site > n_sites {
                    return Err(AlgebraError::SiteOutOfRange { site, n_sites });
                }
                let mut next = Vec::new();
                for (sign, f) in &product {
                    for (s, g) in multiply_factors(f, &[op]) {
                        next.push((sign * s, g));
                    }
                }
                product = next;
            }
            for (sign, f) in product {
                out.add_term(f, coefficient * sign);
            }
        }
        Ok(out)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Terms in canonical order.
    pub fn terms(&self) -> impl Iterator<Item = OperatorTerm> + '_ {
        self.terms.iter().map(|(f, c)| OperatorTerm { coefficient: *c, factors: f.clone() })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Factors, &C64)> + '_ {
        self.terms.iter()
    }

    /// Coefficient of a canonical factor list (zero when absent).
    pub fn coefficient(&self, factors: &[SiteOperator]) -> C64 {
        self.terms.get(factors).copied().unwrap_or_default()
    }

    /// Highest factor count among the terms.
    pub fn max_order(&self) -> usize {
        self.terms.keys().map(Vec::len).max().unwrap_or(0)
    }

    /// Adds `coefficient · factors`; `factors` must already be canonical.
    pub(crate) fn add_term(&mut self, factors: Factors, coefficient: C64) {
        if coefficient == C64::default() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(factors) {
            Entry::Vacant(v) => {
                v.insert(coefficient);
            }
            Entry::Occupied(mut o) => {
                let sum = *o.get() + coefficient;
                if sum == C64::default() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    fn check(&self, other: &OperatorSum) -> Result<(), AlgebraError> {
        if self.n_sites != other.n_sites {
            return Err(AlgebraError::SizeMismatch { left: self.n_sites, right: other.n_sites });
        }
        Ok(())
    }

    pub fn add(&self, other: &OperatorSum) -> Result<OperatorSum, AlgebraError> {
        self.check(other)?;
        let mut out = self.clone();
        for (f, c) in &other.terms {
            out.add_term(f.clone(), *c);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &OperatorSum) -> Result<OperatorSum, AlgebraError> {
        self.check(other)?;
        let mut out = self.clone();
        for (f, c) in &other.terms {
            out.add_term(f.clone(), -*c);
        }
        Ok(out)
    }

    pub fn scale(&self, factor: C64) -> OperatorSum {
        let mut out = Self::zero(self.n_sites);
        for (f, c) in &self.terms {
            out.add_term(f.clone(), *c * factor);
        }
        out
    }

    /// Accumulates `factor · (self · other)` into `acc` without allocating
    /// an intermediate sum.
    pub(crate) fn multiply_into(&self, other: &OperatorSum, factor: C64, acc: &mut OperatorSum) {
        for (fa, ca) in &self.terms {
            for (fb, cb) in &other.terms {
                let c = *ca * *cb * factor;
                for (sign, f) in multiply_factors(fa, fb) {
                    acc.add_term(f, c * sign);
                }
            }
        }
    }

    pub fn multiply(&self, other: &OperatorSum) -> Result<OperatorSum, AlgebraError> {
        self.check(other)?;
        let mut out = Self::zero(self.n_sites);
        self.multiply_into(other, C64::new(1.0, 0.0), &mut out);
        Ok(out)
    }

    /// `[self, other] = self·other − other·self`
    pub fn commutator(&self, other: &OperatorSum) -> Result<OperatorSum, AlgebraError> {
        self.check(other)?;
        let mut out = Self::zero(self.n_sites);
        self.multiply_into(other, C64::new(1.0, 0.0), &mut out);
        other.multiply_into(self, C64::new(-1.0, 0.0), &mut out);
        Ok(out)
    }

    /// `{self, other} = self·other + other·self`
    pub fn anticommutator(&self, other: &OperatorSum) -> Result<OperatorSum, AlgebraError> {
        self.check(other)?;
        let mut out = Self::zero(self.n_sites);
        self.multiply_into(other, C64::new(1.0, 0.0), &mut out);
        other.multiply_into(self, C64::new(1.0, 0.0), &mut out);
        Ok(out)
    }

    pub fn adjoint(&self) -> OperatorSum {
        let mut out = Self::zero(self.n_sites);
        for (f, c) in &self.terms {
            let adj: Factors = f.iter().map(|op| op.adjoint()).collect();
            out.add_term(adj, c.conj());
        }
        out
    }

    /// True when every term is a product of `σ²²` projectors (diagonal in the
    /// computational basis).
    pub fn is_diagonal(&self) -> bool {
        self.terms.keys().all(|f| f.iter().all(|op| op.kind == Transition::Excited))
    }
}

pub(crate) fn fmt_complex(f: &mut fmt::Formatter<'_>, c: C64) -> fmt::Result {
    if c.im < 0.0 || (c.im == 0.0 && c.im.is_sign_negative()) {
        write!(f, "({}-{}i)", c.re, -c.im)
    } else {
        write!(f, "({}+{}i)", c.re, c.im)
    }
}

impl fmt::Display for OperatorSum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (factors, c)) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            fmt_complex(f, *c)?;
            if factors.is_empty() {
                write!(f, "·I")?;
            }
            for op in factors {
                write!(f, "·{op}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn raise_times_lower_is_projector() {
        let p = OperatorSum::sigma_plus(1, 1).multiply(&OperatorSum::sigma_minus(1, 1)).unwrap();
        assert_eq!(p, OperatorSum::sigma_22(1, 1));
    }

    #[test]
    fn projector_is_idempotent() {
        let p = OperatorSum::sigma_22(1, 1);
        assert_eq!(p.multiply(&p).unwrap(), p);
    }

    #[test]
    fn raise_squared_vanishes() {
        let p = OperatorSum::sigma_plus(1, 1);
        assert!(p.multiply(&p).unwrap().is_zero());
    }

    #[test]
    fn distinct_sites_reorder() {
        let p = OperatorSum::sigma_minus(2, 2).multiply(&OperatorSum::sigma_plus(2, 1)).unwrap();
        assert_eq!(p.len(), 1);
        let t = p.terms().next().unwrap();
        assert_eq!(
            t.factors,
            vec![SiteOperator::new(1, Transition::Raise), SiteOperator::new(2, Transition::Lower)]
        );
        assert_eq!(t.coefficient, c(1.0, 0.0));
    }

    #[test]
    fn lower_times_raise_expands_ground_projector() {
        let p = OperatorSum::sigma_minus(1, 1).multiply(&OperatorSum::sigma_plus(1, 1)).unwrap();
        let expected = OperatorSum::identity(1).sub(&OperatorSum::sigma_22(1, 1)).unwrap();
        assert_eq!(p, expected);
    }

    #[test]
    fn commutator_examples() {
        let sz = OperatorSum::sigma_plus(1, 1).commutator(&OperatorSum::sigma_minus(1, 1)).unwrap();
        assert_eq!(sz, OperatorSum::sigma_z(1, 1));

        let zero = OperatorSum::sigma_22(2, 1).commutator(&OperatorSum::sigma_22(2, 2)).unwrap();
        assert!(zero.is_zero());

        let r = OperatorSum::sigma_x(1, 1).commutator(&OperatorSum::sigma_22(1, 1)).unwrap();
        let expected = OperatorSum::sigma_minus(1, 1).sub(&OperatorSum::sigma_plus(1, 1)).unwrap();
        assert_eq!(r, expected);
    }

    #[test]
    fn adjoint_examples() {
        assert_eq!(OperatorSum::sigma_plus(1, 1).adjoint(), OperatorSum::sigma_minus(1, 1));
        let t = OperatorSum::from_terms(
            2,
            [(c(0.0, 2.0), vec![SiteOperator::new(1, Transition::Excited), SiteOperator::new(2, Transition::Raise)])],
        )
        .unwrap();
        let expected = OperatorSum::from_terms(
            2,
            [(c(0.0, -2.0), vec![SiteOperator::new(1, Transition::Excited), SiteOperator::new(2, Transition::Lower)])],
        )
        .unwrap();
        assert_eq!(t.adjoint(), expected);
        assert_eq!(OperatorSum::sigma_x(1, 1).adjoint(), OperatorSum::sigma_x(1, 1));
    }

    #[test]
    fn size_mismatch_is_reported() {
        let err = OperatorSum::sigma_plus(1, 1).multiply(&OperatorSum::sigma_plus(2, 1)).unwrap_err();
        assert_eq!(err, AlgebraError::SizeMismatch { left: 1, right: 2 });
        assert!(OperatorSum::try_single(2, 3, Transition::Raise).is_err());
        assert!(OperatorSum::try_single(2, 0, Transition::Raise).is_err());
    }

    #[test]
    fn exact_cancellation_prunes_terms() {
        let a = OperatorSum::sigma_plus(1, 1);
        assert!(a.sub(&a).unwrap().is_empty());
    }

    #[test]
    fn from_terms_contracts_same_site() {
        let s = OperatorSum::from_terms(
            1,
            [(c(1.0, 0.0), vec![SiteOperator::new(1, Transition::Raise), SiteOperator::new(1, Transition::Lower)])],
        )
        .unwrap();
        assert_eq!(s, OperatorSum::sigma_22(1, 1));
    }

    #[test]
    fn display_format() {
        let s = OperatorSum::from_terms(
            2,
            [
                (c(0.5, 0.0), vec![SiteOperator::new(1, Transition::Excited), SiteOperator::new(2, Transition::Raise)]),
                (c(-1.0, 0.0), vec![]),
                (c(0.0, -2.0), vec![SiteOperator::new(2, Transition::Lower)]),
            ],
        )
        .unwrap();
        assert_eq!(s.to_string(), "(-1+0i)·I + (0.5+0i)·s22[1]·sp[2] + (0-2i)·sm[2]");
        assert_eq!(OperatorSum::zero(3).to_string(), "0");
    }
}
