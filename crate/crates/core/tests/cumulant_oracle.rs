//! Cumulant formulas against brute-force set-partition enumeration.

use std::collections::BTreeMap;

use proptest::prelude::*;

use cumulant_core::cumulant::{enumerate_partitions, expand_moment, joint_cumulant, Moment, MomentPolynomial};
use cumulant_core::opalg::{SiteOperator, Transition, C64};

/// All set partitions of the bitmask `set`, each as a list of block masks.
/// Built by choosing the block holding the lowest element, then recursing.
fn partitions(set: u32) -> Vec<Vec<u32>> {
    if set == 0 {
        return vec![vec![]];
    }
    let low = set & set.wrapping_neg();
    let rest = set & !low;
    let mut out = Vec::new();
    let mut sub = rest;
    loop {
        let block = low | sub;
        for mut tail in partitions(set & !block) {
            tail.insert(0, block);
            out.push(tail);
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & rest;
    }
    out
}

fn factorial(n: usize) -> i128 {
    (1..=n as i128).product()
}

/// Polynomial over subset masks with exact integer coefficients.
type MaskPoly = BTreeMap<Vec<u32>, i128>;

fn add_mono(p: &mut MaskPoly, mut mono: Vec<u32>, c: i128) {
    mono.sort_unstable();
    let e = p.entry(mono.clone()).or_insert(0);
    *e += c;
    if *e == 0 {
        p.remove(&mono);
    }
}

/// One application of the expansion formula to the moment of `set`.
fn expansion_step(set: u32) -> MaskPoly {
    let mut p = MaskPoly::new();
    for part in partitions(set) {
        if part.len() == 1 {
            continue;
        }
        let k = part.len();
        let sign = if k % 2 == 0 { 1 } else { -1 };
        add_mono(&mut p, part, sign * factorial(k - 1));
    }
    p
}

/// Repeats the expansion step until no moment exceeds `order`.
fn expand_recursive(set: u32, order: usize) -> MaskPoly {
    let mut p = MaskPoly::new();
    if (set.count_ones() as usize) <= order {
        add_mono(&mut p, vec![set], 1);
        return p;
    }
    for (mono, c) in expansion_step(set) {
        let mut acc: MaskPoly = [(vec![], c)].into_iter().collect();
        for b in mono {
            let factor = expand_recursive(b, order);
            let mut next = MaskPoly::new();
            for (m1, c1) in &acc {
                for (m2, c2) in &factor {
                    let mut m = m1.clone();
                    m.extend(m2);
                    add_mono(&mut next, m, c1 * c2);
                }
            }
            acc = next;
        }
        for (m, c2) in acc {
            add_mono(&mut p, m, c2);
        }
    }
    p
}

/// Joint cumulant of `set` as a polynomial over moments.
fn cumulant_poly(set: u32) -> MaskPoly {
    let mut p = MaskPoly::new();
    for part in partitions(set) {
        let k = part.len();
        let sign = if k % 2 == 1 { 1 } else { -1 };
        add_mono(&mut p, part, sign * factorial(k - 1));
    }
    p
}

/// Moment with all cumulants above `order` set to zero, in one shot.
fn expand_single_shot(set: u32, order: usize) -> MaskPoly {
    let mut p = MaskPoly::new();
    for part in partitions(set) {
        if part.iter().any(|b| b.count_ones() as usize > order) {
            continue;
        }
        let mut acc: MaskPoly = [(vec![], 1)].into_iter().collect();
        for b in part {
            let k = cumulant_poly(b);
            let mut next = MaskPoly::new();
            for (m1, c1) in &acc {
                for (m2, c2) in &k {
                    let mut m = m1.clone();
                    m.extend(m2);
                    add_mono(&mut next, m, c1 * c2);
                }
            }
            acc = next;
        }
        for (m, c) in acc {
            add_mono(&mut p, m, c);
        }
    }
    p
}

fn moment(kinds: &[Transition]) -> Moment {
    Moment::new(kinds.iter().enumerate().map(|(i, &k)| SiteOperator::new(i + 1, k)).collect()).unwrap()
}

fn sub_moment(kinds: &[Transition], mask: u32) -> Moment {
    Moment::new(
        kinds
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(i, &k)| SiteOperator::new(i + 1, k))
            .collect(),
    )
    .unwrap()
}

fn to_moment_poly(kinds: &[Transition], p: &MaskPoly) -> BTreeMap<Vec<Moment>, i128> {
    let mut out = BTreeMap::new();
    for (mono, c) in p {
        let mut ms: Vec<Moment> = mono.iter().map(|&b| sub_moment(kinds, b)).collect();
        ms.sort();
        *out.entry(ms).or_insert(0) += c;
    }
    out
}

fn assert_matches(kinds: &[Transition], got: &MomentPolynomial, expected: &MaskPoly) {
    let expected = to_moment_poly(kinds, expected);
    assert_eq!(got.len(), expected.len(), "term count for {kinds:?}");
    for (mono, c) in &expected {
        let g = got.coefficient(mono);
        assert_eq!(g, C64::new(*c as f64, 0.0), "coefficient of {mono:?}");
    }
}

fn kinds_for(n: usize, seed: usize) -> Vec<Transition> {
    (0..n).map(|i| Transition::ALL[(seed / 3usize.pow(i as u32)) % 3]).collect()
}

fn bell_numbers(max: usize) -> Vec<u128> {
    // B_{n+1} = Σ C(n, k) B_k
    let mut b = vec![1u128];
    for n in 0..max {
        let mut binom = 1u128;
        let mut s = 0u128;
        for (k, bk) in b.iter().enumerate() {
            s += binom * bk;
            binom = binom * (n - k) as u128 / (k as u128 + 1);
        }
        b.push(s);
    }
    b
}

#[test]
fn partition_counts_are_bell_numbers() {
    let bell = bell_numbers(8);
    assert_eq!(&bell[1..=8], &[1, 2, 5, 15, 52, 203, 877, 4140]);
    for n in 1..=8 {
        let parts = enumerate_partitions(n).unwrap();
        assert_eq!(parts.len() as u128, bell[n], "n={n}");
        assert_eq!(partitions((1 << n) - 1).len() as u128, bell[n]);
    }
}

#[test]
fn expansion_matches_brute_force() {
    for n in 1..=6 {
        for o in 1..=n {
            for seed in [0, 5, 17] {
                let kinds = kinds_for(n, seed);
                let got = expand_moment(&moment(&kinds), o).unwrap();
                assert_matches(&kinds, &got, &expand_recursive((1 << n) - 1, o));
            }
        }
    }
}

#[test]
fn recursive_and_single_shot_agree() {
    for n in 2..=6 {
        for o in 1..n {
            let set = (1u32 << n) - 1;
            assert_eq!(expand_recursive(set, o), expand_single_shot(set, o), "n={n} o={o}");
        }
    }
}

#[test]
fn cumulant_matches_brute_force() {
    for n in 1..=6 {
        let kinds = kinds_for(n, 11);
        let got = joint_cumulant(&moment(&kinds)).unwrap();
        assert_matches(&kinds, &got, &cumulant_poly((1 << n) - 1));
    }
}

#[test]
fn cumulant_round_trip() {
    for n in 1..=5 {
        let m = moment(&kinds_for(n, 7));
        let mut p = joint_cumulant(&m).unwrap();
        if n > 1 {
            p.add_scaled(&expand_moment(&m, n - 1).unwrap(), C64::new(1.0, 0.0));
        }
        assert_eq!(p, MomentPolynomial::from_moment(m));
    }
}

#[test]
fn closure_property_exhaustive() {
    for n in 1..=8 {
        let m = moment(&kinds_for(n, 3));
        for o in 1..=8 {
            let p = expand_moment(&m, o).unwrap();
            assert!(p.max_moment_order() <= o.min(n), "n={n} o={o}");
            // blocks keep the factor order of the original product
            for mm in p.moments() {
                let sites: Vec<u16> = mm.factors().iter().map(|f| f.site).collect();
                assert!(sites.windows(2).all(|w| w[0] < w[1]));
                for f in mm.factors() {
                    assert!(m.factors().contains(f));
                }
            }
        }
    }
}

proptest! {
    /// Empirical product distribution of two independent groups: the joint
    /// cumulant of the whole family vanishes.
    #[test]
    fn independence_kills_cumulant(
        n in 2usize..=5,
        split in 1usize..4,
        a in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 5), 3..6),
        b in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 5), 3..6),
    ) {
        let split = split.min(n - 1);
        let kinds = vec![Transition::Excited; n];
        let m = moment(&kinds);
        let poly = joint_cumulant(&m).unwrap();
        // all pairs (i, j) of group samples form the joint sample set
        let expectation = |mm: &Moment| {
            let mut s = 0.0;
            for ra in &a {
                for rb in &b {
                    let mut v = 1.0;
                    for f in mm.factors() {
                        let i = f.site as usize - 1;
                        v *= if i < split { ra[i] } else { rb[i] };
                    }
                    s += v;
                }
            }
            C64::new(s / (a.len() * b.len()) as f64, 0.0)
        };
        let k = poly.evaluate(expectation);
        prop_assert!(k.norm() < 1e-9, "cumulant {k}");
    }
}
