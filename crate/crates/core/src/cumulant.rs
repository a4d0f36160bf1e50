//! Set partitions, joint cumulants and the recursive moment expansion that
//! closes a hierarchy of operator moments at a chosen order.
//!
//! For ordered variables `X₁…Xₙ` the joint cumulant is
//!
//! ```text
//! ⟨X₁⋯Xₙ⟩_c = Σ_{p ∈ P(I)} (|p|−1)! (−1)^{|p|−1} Π_{B∈p} ⟨Π_{i∈B} Xᵢ⟩
//! ```
//!
//! Setting it to zero gives the expansion of an order-`n` moment in moments of
//! order `≤ n−1`:
//!
//! ```text
//! ⟨X₁⋯Xₙ⟩ = Σ_{p ∈ P(I)\{I}} (|p|−1)! (−1)^{|p|} Π_{B∈p} ⟨Π_{i∈B} Xᵢ⟩
//! ```
//!
//! Applied recursively this expresses any moment through moments of order
//! `≤ o`. Coefficients are computed in exact integer arithmetic over subset
//! bitmasks ("templates") and cached per `(n, o)`; they only become complex
//! numbers when a template is instantiated on concrete operator factors.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use thiserror::Error;

use crate::opalg::{fmt_complex, Factors, SiteOperator, C64};

/// Largest supported index set; Bell(12) = 4 213 597.
pub const MAX_PARTITION_SIZE: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CumulantError {
    #[error("partition size {0} outside supported range 1..={MAX_PARTITION_SIZE}")]
    Bound(usize),
    #[error("closure order must be at least 1")]
    ZeroOrder,
    #[error("moment factors must be sorted by site with one factor per site")]
    NonCanonical,
}

fn check_size(n: usize) -> Result<(), CumulantError> {
    if n == 0 || n > MAX_PARTITION_SIZE {
        Err(CumulantError::Bound(n))
    } else {
        Ok(())
    }
}

/// A set partition of `{1, …, n}`. Blocks are sorted by their smallest
/// element and elements within a block ascend.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
}

impl Partition {
    /// Canonicalizes an arbitrary list of blocks. Returns `None` unless the
    /// blocks are nonempty, pairwise disjoint and cover `{1, …, n}`.
    pub fn from_blocks(mut blocks: Vec<Vec<usize>>) -> Option<Self> {
        let n: usize = blocks.iter().map(Vec::len).sum();
        let mut seen = vec![false; n + 1];
        for b in &mut blocks {
            if b.is_empty() {
                return None;
            }
            b.sort_unstable();
            for &e in b.iter() {
                if e == 0 || e > n || seen[e] {
                    return None;
                }
                seen[e] = true;
            }
        }
        blocks.sort_by_key(|b| b[0]);
        Some(Self { blocks })
    }

    fn from_growth_string(labels: &[usize], n_blocks: usize) -> Self {
        let mut blocks = vec![Vec::new(); n_blocks];
        for (i, &l) in labels.iter().enumerate() {
            blocks[l].push(i + 1);
        }
        Self { blocks }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Number of blocks `|p|`.
    pub fn size(&self) -> usize {
        self.blocks.len()
    }

    /// Block membership as 0-based bitmasks.
    pub fn masks(&self) -> Vec<u16> {
        self.blocks.iter().map(|b| b.iter().fold(0u16, |m, &e| m | (1 << (e - 1)))).collect()
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            write!(f, "{{")?;
            for e in b {
                write!(f, "{e}")?;
            }
            write!(f, "}}")?;
        }
        Ok(())
    }
}

/// Visits every partition of `{0, …, n−1}` as a restricted growth string
/// `labels` (block label per element, labels introduced in order) together
/// with its block count.
pub fn for_each_growth_string<F: FnMut(&[usize], usize)>(n: usize, mut visit: F) {
    if n == 0 {
        return;
    }
    let mut labels = vec![0usize; n];
    // prefix_max[i] = max(labels[0..=i])
    let mut prefix_max = vec![0usize; n];
    loop {
        visit(&labels, prefix_max[n - 1] + 1);
        let mut i = n - 1;
        loop {
            if i == 0 {
                return;
            }
            if labels[i] <= prefix_max[i - 1] {
                labels[i] += 1;
                prefix_max[i] = prefix_max[i - 1].max(labels[i]);
                for j in i + 1..n {
                    labels[j] = 0;
                    prefix_max[j] = prefix_max[i];
                }
                break;
            }
            i -= 1;
        }
    }
}

/// All set partitions of `{1, …, n}` in canonical form.
pub fn enumerate_partitions(n: usize) -> Result<Vec<Partition>, CumulantError> {
    check_size(n)?;
    let mut out = Vec::new();
    for_each_growth_string(n, |labels, k| out.push(Partition::from_growth_string(labels, k)));
    Ok(out)
}

fn factorial(k: usize) -> i128 {
    (1..=k as i128).product()
}

/// Integer-coefficient polynomial in subset moments. Each monomial is a
/// sorted multiset of 0-based bitmasks over the index set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpansionTemplate {
    pub n: usize,
    pub terms: BTreeMap<Vec<u16>, i128>,
}

impl ExpansionTemplate {
    fn single(n: usize) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(vec![full_mask(n)], 1);
        Self { n, terms }
    }

    fn add(&mut self, monomial: Vec<u16>, coefficient: i128) {
        use std::collections::btree_map::Entry;
        match self.terms.entry(monomial) {
            Entry::Vacant(v) => {
                if coefficient != 0 {
                    v.insert(coefficient);
                }
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += coefficient;
                if *o.get() == 0 {
                    o.remove();
                }
            }
        }
    }
}

fn full_mask(n: usize) -> u16 {
    ((1u32 << n) - 1) as u16
}

/// Maps bit `t` of `mask` to the `t`-th set bit of `block`.
fn relabel(mask: u16, block: u16) -> u16 {
    let mut out = 0u16;
    let mut rest = block;
    let mut t = 0;
    while rest != 0 {
        let bit = rest & rest.wrapping_neg();
        if mask & (1 << t) != 0 {
            out |= bit;
        }
        rest &= rest - 1;
        t += 1;
    }
    out
}

type TemplateCache = RwLock<HashMap<(usize, usize), Arc<ExpansionTemplate>>>;

fn template_cache() -> &'static TemplateCache {
    static CACHE: OnceLock<TemplateCache> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Expansion of `⟨X₁⋯Xₙ⟩` in moments of order `≤ order`, obtained by
/// applying the one-step partition expansion and recursing on any block
/// still above `order`. For `n ≤ order` it is the moment itself.
pub fn expansion_template(n: usize, order: usize) -> Result<Arc<ExpansionTemplate>, CumulantError> {
    check_size(n)?;
    if order == 0 {
        return Err(CumulantError::ZeroOrder);
    }
    let order = order.min(n);
    if let Some(t) = template_cache().read().unwrap().get(&(n, order)) {
        return Ok(Arc::clone(t));
    }
    let template = if n <= order {
        ExpansionTemplate::single(n)
    } else {
        let mut sub = Vec::with_capacity(n);
        for b in 1..n {
            sub.push(expansion_template(b, order)?);
        }
        let mut out = ExpansionTemplate { n, terms: BTreeMap::new() };
        for_each_growth_string(n, |labels, k| {
            if k == 1 {
                return;
            }
            let coefficient = factorial(k - 1) * if k % 2 == 0 { 1 } else { -1 };
            let mut blocks = vec![0u16; k];
            for (i, &l) in labels.iter().enumerate() {
                blocks[l] |= 1 << i;
            }
            let mut product: Vec<(i128, Vec<u16>)> = vec![(coefficient, Vec::new())];
            for &block in &blocks {
                let t = &sub[block.count_ones() as usize - 1];
                let mut next = Vec::with_capacity(product.len() * t.terms.len());
                for (c, mono) in &product {
                    for (tm, tc) in &t.terms {
                        let mut m = mono.clone();
                        m.extend(tm.iter().map(|&x| relabel(x, block)));
                        next.push((c * tc, m));
                    }
                }
                product = next;
            }
            for (c, mut m) in product {
                m.sort_unstable();
                out.add(m, c);
            }
        });
        out
    };
    let template = Arc::new(template);
    template_cache().write().unwrap().insert((n, order), Arc::clone(&template));
    Ok(template)
}

/// Joint cumulant of `n` variables in integer-coefficient subset form.
pub fn cumulant_template(n: usize) -> Result<ExpansionTemplate, CumulantError> {
    check_size(n)?;
    let mut out = ExpansionTemplate { n, terms: BTreeMap::new() };
    for_each_growth_string(n, |labels, k| {
        let coefficient = factorial(k - 1) * if k % 2 == 1 { 1 } else { -1 };
        let mut blocks = vec![0u16; k];
        for (i, &l) in labels.iter().enumerate() {
            blocks[l] |= 1 << i;
        }
        blocks.sort_unstable();
        out.add(blocks, coefficient);
    });
    Ok(out)
}

/// Expectation value of a canonical operator product.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Moment(Factors);

impl Moment {
    pub fn new(factors: Factors) -> Result<Self, CumulantError> {
        if factors.windows(2).any(|w| w[0].site >= w[1].site) {
            return Err(CumulantError::NonCanonical);
        }
        Ok(Self(factors))
    }

    pub(crate) fn from_canonical(factors: Factors) -> Self {
        Self(factors)
    }

    pub fn factors(&self) -> &[SiteOperator] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    /// Key of the conjugate moment, `⟨O⟩* = ⟨O†⟩`.
    pub fn adjoint(&self) -> Moment {
        Moment(self.0.iter().map(|op| op.adjoint()).collect())
    }

    pub fn is_self_adjoint(&self) -> bool {
        self.0.iter().all(|op| op.adjoint() == *op)
    }

    /// Sub-product over the factors selected by `mask` (bit `i` ↔ factor `i`).
    pub fn select(&self, mask: u16) -> Moment {
        Moment(self.0.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, op)| *op).collect())
    }
}

impl fmt::Display for Moment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "I");
        }
        for (i, op) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "·")?;
            }
            write!(f, "{op}")?;
        }
        Ok(())
    }
}

/// Polynomial in moment expectation values. A monomial is a sorted multiset
/// of moments; the empty monomial is the constant term.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MomentPolynomial {
    terms: BTreeMap<Vec<Moment>, C64>,
}

impl MomentPolynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: C64) -> Self {
        let mut p = Self::zero();
        p.add_monomial(Vec::new(), c);
        p
    }

    pub fn from_moment(m: Moment) -> Self {
        let mut p = Self::zero();
        p.add_monomial(vec![m], C64::new(1.0, 0.0));
        p
    }

    /// Adds `c · Π moments`; the multiset is sorted here. Order-0 moments
    /// are dropped from the product since `⟨𝟙⟩ = 1`.
    pub fn add_monomial(&mut self, mut moments: Vec<Moment>, c: C64) {
        if c == C64::default() {
            return;
        }
        moments.retain(|m| m.order() > 0);
        moments.sort_unstable();
        use std::collections::btree_map::Entry;
        match self.terms.entry(moments) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == C64::default() {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn add_scaled(&mut self, other: &MomentPolynomial, factor: C64) {
        for (m, c) in &other.terms {
            self.add_monomial(m.clone(), *c * factor);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<Moment>, &C64)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, monomial: &[Moment]) -> C64 {
        let mut key = monomial.to_vec();
        key.sort_unstable();
        self.terms.get(&key).copied().unwrap_or_default()
    }

    /// Highest moment order appearing in any monomial.
    pub fn max_moment_order(&self) -> usize {
        self.terms.keys().flat_map(|m| m.iter().map(Moment::order)).max().unwrap_or(0)
    }

    pub fn moments(&self) -> impl Iterator<Item = &Moment> {
        self.terms.keys().flatten()
    }

    pub fn evaluate<F: FnMut(&Moment) -> C64>(&self, mut value: F) -> C64 {
        self.terms.iter().map(|(mono, c)| mono.iter().fold(*c, |acc, m| acc * value(m))).sum()
    }

    /// Replaces every moment for which `rule` returns a polynomial.
    pub fn substitute<F: Fn(&Moment) -> Option<MomentPolynomial>>(&self, rule: F) -> MomentPolynomial {
        let mut out = MomentPolynomial::zero();
        for (mono, c) in &self.terms {
            let mut product = MomentPolynomial::constant(*c);
            for m in mono {
                let factor = rule(m).unwrap_or_else(|| MomentPolynomial::from_moment(m.clone()));
                product = product.multiply(&factor);
            }
            out.add_scaled(&product, C64::new(1.0, 0.0));
        }
        out
    }

    pub fn multiply(&self, other: &MomentPolynomial) -> MomentPolynomial {
        let mut out = MomentPolynomial::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let mut m = ma.clone();
                m.extend(mb.iter().cloned());
                out.add_monomial(m, *ca * *cb);
            }
        }
        out
    }
}

impl fmt::Display for MomentPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (mono, c)) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            fmt_complex(f, *c)?;
            for m in mono {
                write!(f, "·<{m}>")?;
            }
        }
        Ok(())
    }
}

fn instantiate(template: &ExpansionTemplate, moment: &Moment) -> MomentPolynomial {
    let mut out = MomentPolynomial::zero();
    for (masks, &c) in &template.terms {
        let moments = masks.iter().map(|&m| moment.select(m)).collect();
        out.add_monomial(moments, C64::new(c as f64, 0.0));
    }
    out
}

/// Joint cumulant `⟨X₁⋯Xₙ⟩_c` of the factors of `moment`.
pub fn joint_cumulant(moment: &Moment) -> Result<MomentPolynomial, CumulantError> {
    let template = cumulant_template(moment.order())?;
    Ok(instantiate(&template, moment))
}

/// Closes `moment` at `order`: unchanged when `order(moment) ≤ order`,
/// otherwise a polynomial in moments of order `≤ order` only.
pub fn expand_moment(moment: &Moment, order: usize) -> Result<MomentPolynomial, CumulantError> {
    if order == 0 {
        return Err(CumulantError::ZeroOrder);
    }
    let n = moment.order();
    if n <= order {
        if n > MAX_PARTITION_SIZE {
            return Err(CumulantError::Bound(n));
        }
        return Ok(MomentPolynomial::from_moment(moment.clone()));
    }
    let template = expansion_template(n, order)?;
    Ok(instantiate(&template, moment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opalg::Transition;

    fn moment(n: usize) -> Moment {
        Moment::new((1..=n).map(|s| SiteOperator::new(s, Transition::Raise)).collect()).unwrap()
    }

    fn coef(p: &MomentPolynomial, m: &Moment, masks: &[u16]) -> f64 {
        let mono: Vec<Moment> = masks.iter().map(|&k| m.select(k)).collect();
        p.coefficient(&mono).re
    }

    #[test]
    fn small_partition_lists() {
        let p1 = enumerate_partitions(1).unwrap();
        assert_eq!(p1.len(), 1);
        assert_eq!(p1[0].to_string(), "{1}");

        let p3 = enumerate_partitions(3).unwrap();
        let rendered: Vec<String> = p3.iter().map(|p| p.to_string()).collect();
        assert_eq!(rendered.len(), 5);
        for expected in ["{123}", "{1}{23}", "{13}{2}", "{12}{3}", "{1}{2}{3}"] {
            assert!(rendered.contains(&expected.to_string()), "{expected} missing from {rendered:?}");
        }
        assert_eq!(enumerate_partitions(6).unwrap().len(), 203);
    }

    #[test]
    fn partition_bounds() {
        assert_eq!(enumerate_partitions(0), Err(CumulantError::Bound(0)));
        assert_eq!(enumerate_partitions(13).unwrap_err(), CumulantError::Bound(13));
    }

    #[test]
    fn from_blocks_validates() {
        let p = Partition::from_blocks(vec![vec![3, 1], vec![2]]).unwrap();
        assert_eq!(p.to_string(), "{13}{2}");
        assert_eq!(p.masks(), vec![0b101, 0b010]);
        assert!(Partition::from_blocks(vec![vec![1, 1]]).is_none());
        assert!(Partition::from_blocks(vec![vec![1], vec![]]).is_none());
        assert!(Partition::from_blocks(vec![vec![1, 3]]).is_none());
    }

    #[test]
    fn cumulant_low_orders() {
        let m1 = moment(1);
        assert_eq!(joint_cumulant(&m1).unwrap(), MomentPolynomial::from_moment(m1.clone()));

        let m2 = moment(2);
        let k2 = joint_cumulant(&m2).unwrap();
        assert_eq!(k2.len(), 2);
        assert_eq!(coef(&k2, &m2, &[0b11]), 1.0);
        assert_eq!(coef(&k2, &m2, &[0b01, 0b10]), -1.0);

        let m3 = moment(3);
        let k3 = joint_cumulant(&m3).unwrap();
        assert_eq!(k3.len(), 5);
        assert_eq!(coef(&k3, &m3, &[0b111]), 1.0);
        assert_eq!(coef(&k3, &m3, &[0b011, 0b100]), -1.0);
        assert_eq!(coef(&k3, &m3, &[0b101, 0b010]), -1.0);
        assert_eq!(coef(&k3, &m3, &[0b110, 0b001]), -1.0);
        assert_eq!(coef(&k3, &m3, &[0b001, 0b010, 0b100]), 2.0);
    }

    #[test]
    fn expansion_examples() {
        let m2 = moment(2);
        let e = expand_moment(&m2, 1).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(coef(&e, &m2, &[0b01, 0b10]), 1.0);

        let m3 = moment(3);
        let e = expand_moment(&m3, 2).unwrap();
        assert_eq!(e.len(), 4);
        assert_eq!(coef(&e, &m3, &[0b011, 0b100]), 1.0);
        assert_eq!(coef(&e, &m3, &[0b101, 0b010]), 1.0);
        assert_eq!(coef(&e, &m3, &[0b110, 0b001]), 1.0);
        assert_eq!(coef(&e, &m3, &[0b001, 0b010, 0b100]), -2.0);

        assert_eq!(expand_moment(&m3, 3).unwrap(), MomentPolynomial::from_moment(m3.clone()));
        assert_eq!(expand_moment(&m3, 0), Err(CumulantError::ZeroOrder));
    }

    #[test]
    fn mean_field_closure_is_product_of_means() {
        for n in 2..=7 {
            let t = expansion_template(n, 1).unwrap();
            assert_eq!(t.terms.len(), 1, "n={n}");
            let (mono, c) = t.terms.iter().next().unwrap();
            assert_eq!(*c, 1);
            assert_eq!(mono.len(), n);
        }
    }

    #[test]
    fn closure_bounds_order() {
        for n in 1..=8 {
            for o in 1..=n {
                let t = expansion_template(n, o).unwrap();
                for mono in t.terms.keys() {
                    assert!(mono.iter().all(|m| m.count_ones() as usize <= o));
                    let union = mono.iter().fold(0u16, |a, &b| a | b);
                    assert_eq!(union, full_mask(n));
                }
            }
        }
    }

    #[test]
    fn relabel_maps_bits_into_block() {
        assert_eq!(relabel(0b01, 0b1010), 0b0010);
        assert_eq!(relabel(0b10, 0b1010), 0b1000);
        assert_eq!(relabel(0b11, 0b1010), 0b1010);
    }

    #[test]
    fn non_canonical_moment_rejected() {
        let f = vec![SiteOperator::new(2, Transition::Raise), SiteOperator::new(1, Transition::Raise)];
        assert_eq!(Moment::new(f), Err(CumulantError::NonCanonical));
    }
}
