//! Multi-indices over internal-mode coordinates and their resonance classification.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::status::Status;

/// `m = (m+, m-)`, exponents of `z` and `conj(z)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex {
    pub plus: Vec<u32>,
    pub minus: Vec<u32>,
}

impl MultiIndex {
    pub fn zero(n: usize) -> Self {
        Self {
            plus: vec![0; n],
            minus: vec![0; n],
        }
    }

    pub fn new(plus: Vec<u32>, minus: Vec<u32>) -> Self {
        assert_eq!(plus.len(), minus.len());
        Self { plus, minus }
    }

    pub fn unit_plus(j: usize, n: usize) -> Self {
        let mut m = Self::zero(n);
        m.plus[j] = 1;
        m
    }

    pub fn unit_minus(j: usize, n: usize) -> Self {
        let mut m = Self::zero(n);
        m.minus[j] = 1;
        m
    }

    pub fn modes(&self) -> usize {
        self.plus.len()
    }

    pub fn conj(&self) -> Self {
        Self {
            plus: self.minus.clone(),
            minus: self.plus.clone(),
        }
    }

    pub fn norm(&self) -> u32 {
        self.plus.iter().chain(&self.minus).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.norm() == 0
    }

    pub fn is_self_conjugate(&self) -> bool {
        self.plus == self.minus
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            plus: self.plus.iter().zip(&other.plus).map(|(a, b)| a + b).collect(),
            minus: self.minus.iter().zip(&other.minus).map(|(a, b)| a + b).collect(),
        }
    }

    /// `self - other` when componentwise nonnegative.
    pub fn checked_sub(&self, other: &Self) -> Option<Self> {
        let sub = |a: &[u32], b: &[u32]| -> Option<Vec<u32>> {
            a.iter().zip(b).map(|(x, y)| x.checked_sub(*y)).collect()
        };
        Some(Self {
            plus: sub(&self.plus, &other.plus)?,
            minus: sub(&self.minus, &other.minus)?,
        })
    }

    /// Per-mode totals `m+_j + m-_j`.
    pub fn sums(&self) -> Vec<u32> {
        self.plus.iter().zip(&self.minus).map(|(a, b)| a + b).collect()
    }

    pub fn lam(&self, lambdas: &[f64]) -> Result<f64> {
        if lambdas.len() != self.modes() {
            return Err(Error::InvalidInput(format!(
                "{} frequencies for an index over {} modes",
                lambdas.len(),
                self.modes()
            )));
        }
        Ok(self.lam_unchecked(lambdas))
    }

    pub(crate) fn lam_unchecked(&self, lambdas: &[f64]) -> f64 {
        lambdas
            .iter()
            .zip(self.plus.iter().zip(&self.minus))
            .map(|(l, (p, m))| l * (*p as f64 - *m as f64))
            .sum()
    }

    /// Flat exponent vector `(m+, m-)`.
    pub fn exponents(&self) -> Vec<u32> {
        self.plus.iter().chain(&self.minus).cloned().collect()
    }

    pub fn from_exponents(e: &[u32]) -> Self {
        let n = e.len() / 2;
        Self::new(e[..n].to_vec(), e[n..].to_vec())
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[u32]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        write!(f, "({}|{})", join(&self.plus), join(&self.minus))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    /// `m' < m`: dominated with strictly smaller norm.
    Strict,
    /// `m' <= m` only.
    Weak,
    Equal,
    Incomparable,
}

pub fn partial_order(lhs: &MultiIndex, rhs: &MultiIndex) -> Result<Relation> {
    if lhs.modes() != rhs.modes() {
        return Err(Error::InvalidInput("indices over different mode counts".into()));
    }
    if lhs == rhs {
        return Ok(Relation::Equal);
    }
    let dominated = lhs.sums().iter().zip(rhs.sums()).all(|(a, b)| *a <= b);
    Ok(match (dominated, lhs.norm() < rhs.norm()) {
        (true, true) => Relation::Strict,
        (true, false) => Relation::Weak,
        _ => Relation::Incomparable,
    })
}

fn strictly_below(lhs: &MultiIndex, rhs: &MultiIndex) -> bool {
    lhs.norm() < rhs.norm() && lhs.sums().iter().zip(rhs.sums()).all(|(a, b)| *a <= b)
}

/// All indices over `n` modes with norm at most `k`, ordered by norm then lexicographically.
pub fn enumerate_indices(n: usize, k: u32) -> Vec<MultiIndex> {
    let vars = 2 * n;
    let mut out = Vec::new();
    for deg in 0..=k {
        let mut e = vec![0u32; vars];
        compositions(&mut e, 0, deg, &mut |e| out.push(MultiIndex::from_exponents(e)));
    }
    out
}

fn compositions(e: &mut Vec<u32>, pos: usize, left: u32, emit: &mut impl FnMut(&[u32])) {
    if pos + 1 >= e.len() {
        if e.is_empty() {
            if left == 0 {
                emit(e);
            }
            return;
        }
        e[pos] = left;
        emit(e);
        e[pos] = 0;
        return;
    }
    for v in (0..=left).rev() {
        e[pos] = v;
        compositions(e, pos + 1, left - v, emit);
    }
    e[pos] = 0;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    MinimalResonant,
    Ignored,
    Nonresonant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResonanceGroup {
    /// Common positive value `lambda(m) > omega`.
    pub threshold: f64,
    /// Members with positive frequency.
    pub members: Vec<MultiIndex>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResonanceStructure {
    pub modes: usize,
    pub lambdas: Vec<f64>,
    pub omega: f64,
    pub tau: f64,
    pub k_max: u32,
    pub degree_bound: u32,
    pub r_min: Vec<MultiIndex>,
    pub groups: Vec<ResonanceGroup>,
    /// Nonresonant indices up to `k_max`.
    pub nr: Vec<MultiIndex>,
    pub lambda0: Vec<MultiIndex>,
    pub lambda_j: Vec<Vec<MultiIndex>>,
    pub h6: Status,
    pub h6_evidence: Vec<String>,
    /// Indices whose classification sits within `tau` of a threshold.
    pub ambiguous: Vec<MultiIndex>,
    /// Smallest distance of `|lambda(m)|` to `omega` over the enumerated indices.
    pub margin: f64,
}

impl ResonanceStructure {
    pub fn lam(&self, m: &MultiIndex) -> f64 {
        m.lam_unchecked(&self.lambdas)
    }

    pub fn is_ignored(&self, m: &MultiIndex) -> bool {
        self.r_min.iter().any(|r| strictly_below(r, m))
    }

    pub fn kind(&self, m: &MultiIndex) -> IndexKind {
        if self.r_min.contains(m) {
            IndexKind::MinimalResonant
        } else if self.is_ignored(m) {
            IndexKind::Ignored
        } else {
            IndexKind::Nonresonant
        }
    }

    pub fn in_lambda0(&self, m: &MultiIndex) -> bool {
        self.lambda0.contains(m)
    }

    /// Modes `j` with `m` in `Lambda_j`.
    pub fn lambda_sets_of(&self, m: &MultiIndex) -> Vec<usize> {
        (0..self.modes)
            .filter(|&j| self.lambda_j[j].contains(m))
            .collect()
    }

    pub fn min_degree(&self) -> u32 {
        self.r_min.iter().map(|m| m.norm()).min().unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Classifies all indices for internal-mode frequencies `lambdas` at `omega`.
pub fn classify(lambdas: &[f64], omega: f64, tau: f64) -> Result<ResonanceStructure> {
    let n = lambdas.len();
    if !(omega > 0.0 && tau >= 0.0) {
        return Err(Error::InvalidInput("need omega > 0 and tau >= 0".into()));
    }
    for &l in lambdas {
        if !(l > tau && l < omega - tau) {
            return Err(Error::InvalidInput(format!(
                "frequency {l} not separated from 0 and {omega} by {tau}"
            )));
        }
    }
    if n == 0 {
        return Ok(ResonanceStructure {
            modes: 0,
            lambdas: Vec::new(),
            omega,
            tau,
            k_max: 0,
            degree_bound: 0,
            r_min: Vec::new(),
            groups: Vec::new(),
            nr: vec![MultiIndex::zero(0)],
            lambda0: Vec::new(),
            lambda_j: Vec::new(),
            h6: Status::Pass,
            h6_evidence: Vec::new(),
            ambiguous: Vec::new(),
            margin: f64::INFINITY,
        });
    }
    let min_l = lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
    let bound = (omega / min_l).ceil() as u32 + 1;
    let lam = |m: &MultiIndex| m.lam_unchecked(lambdas);
    let is_tie = |v: f64| (v.abs() - omega).abs() <= tau;

    // Minimal resonant indices are pure: dropping a conjugate unit only raises |lambda|.
    let mut ambiguous = Vec::new();
    let mut plus_min = Vec::new();
    for m in enumerate_indices(n, bound) {
        if m.minus.iter().any(|&x| x > 0) || m.is_zero() {
            continue;
        }
        let v = lam(&m);
        if is_tie(v) {
            ambiguous.push(m.clone());
            continue;
        }
        if v <= omega {
            continue;
        }
        let mut minimal = true;
        for j in 0..n {
            if m.plus[j] == 0 {
                continue;
            }
            let mut q = m.clone();
            q.plus[j] -= 1;
            let vq = lam(&q);
            if vq > omega + tau {
                minimal = false;
            } else if is_tie(vq) && !ambiguous.contains(&m) {
                ambiguous.push(m.clone());
            }
        }
        if minimal {
            plus_min.push(m);
        }
    }
    let mut r_min: Vec<MultiIndex> = plus_min.to_vec();
    r_min.extend(plus_min.iter().map(|m| m.conj()));
    r_min.sort();
    let k_max = r_min.iter().map(|m| m.norm()).max().unwrap_or(0);

    let mut groups: BTreeMap<u64, ResonanceGroup> = BTreeMap::new();
    let mut sorted_plus = plus_min.clone();
    sorted_plus.sort_by(|a, b| lam(a).total_cmp(&lam(b)).then(a.cmp(b)));
    let mut thresholds: Vec<f64> = Vec::new();
    for m in &sorted_plus {
        let v = lam(m);
        let k = match thresholds.iter().position(|t| (t - v).abs() <= tau) {
            Some(k) => k,
            None => {
                thresholds.push(v);
                thresholds.len() - 1
            }
        };
        groups
            .entry(k as u64)
            .or_insert_with(|| ResonanceGroup {
                threshold: v,
                members: Vec::new(),
            })
            .members
            .push(m.clone());
    }

    let dominated = |m: &MultiIndex| r_min.iter().any(|r| strictly_below(r, m));
    let all = enumerate_indices(n, bound);
    let mut h6_evidence = Vec::new();
    let mut margin = f64::INFINITY;
    for m in &all {
        let v = lam(m);
        margin = margin.min((v.abs() - omega).abs());
        if !dominated(m) && is_tie(v) {
            h6_evidence.push(format!("|lambda{m}| = {:.12} within tau of omega", v.abs()));
        }
        if m.minus.iter().all(|&x| x == 0) && m.norm() >= 2 {
            for (j, l) in lambdas.iter().enumerate() {
                if (v - l).abs() <= tau {
                    h6_evidence.push(format!("lambda{m} = lambda_{}", j + 1));
                }
            }
        }
    }
    let nr: Vec<MultiIndex> = all
        .iter()
        .filter(|m| m.norm() <= k_max && !r_min.contains(m) && !dominated(m))
        .cloned()
        .collect();
    let lambda0 = nr
        .iter()
        .filter(|m| !m.is_zero() && lam(m).abs() <= tau)
        .cloned()
        .collect();
    let lambda_j = lambdas
        .iter()
        .map(|l| nr.iter().filter(|m| (lam(m) - l).abs() <= tau).cloned().collect())
        .collect();
    let h6 = Status::from_bool(h6_evidence.is_empty());
    Ok(ResonanceStructure {
        modes: n,
        lambdas: lambdas.to_vec(),
        omega,
        tau,
        k_max,
        degree_bound: bound,
        r_min,
        groups: groups.into_values().collect(),
        nr,
        lambda0,
        lambda_j,
        h6,
        h6_evidence,
        ambiguous,
        margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mi(p: &[u32], m: &[u32]) -> MultiIndex {
        MultiIndex::new(p.to_vec(), m.to_vec())
    }

    #[test]
    fn lam_examples() {
        let l = [0.6];
        assert_eq!(MultiIndex::unit_plus(0, 1).lam(&l).unwrap(), 0.6);
        assert_eq!(mi(&[2], &[0]).lam(&l).unwrap(), 1.2);
        assert_eq!(mi(&[3], &[3]).lam(&l).unwrap(), 0.0);
        assert!(mi(&[1], &[0]).lam(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn order_examples() {
        let rel = |a: MultiIndex, b: MultiIndex| partial_order(&a, &b).unwrap();
        assert_eq!(rel(mi(&[1], &[0]), mi(&[2], &[0])), Relation::Strict);
        assert_eq!(rel(mi(&[1], &[0]), mi(&[0], &[1])), Relation::Weak);
        assert_eq!(rel(mi(&[0], &[1]), mi(&[1], &[0])), Relation::Weak);
        assert_eq!(rel(mi(&[2], &[1]), mi(&[2], &[1])), Relation::Equal);
        assert_eq!(rel(mi(&[2, 0], &[0, 0]), mi(&[0, 3], &[0, 0])), Relation::Incomparable);
        assert!(partial_order(&mi(&[1], &[0]), &mi(&[1, 0], &[0, 0])).is_err());
    }

    #[test]
    fn single_mode_example() {
        let rs = classify(&[0.6], 1.0, 1e-9).unwrap();
        assert_eq!(rs.r_min, vec![mi(&[0], &[2]), mi(&[2], &[0])]);
        assert_eq!(rs.groups.len(), 1);
        assert!((rs.groups[0].threshold - 1.2).abs() < 1e-15);
        assert_eq!(rs.groups[0].members.len(), 1);
        assert_eq!(rs.k_max, 2);
        let mut nr = rs.nr.clone();
        nr.sort();
        let mut want = vec![mi(&[0], &[0]), mi(&[1], &[0]), mi(&[0], &[1]), mi(&[1], &[1])];
        want.sort();
        assert_eq!(nr, want);
        assert_eq!(rs.lambda0, vec![mi(&[1], &[1])]);
        assert_eq!(rs.lambda_j, vec![vec![mi(&[1], &[0])]]);
        assert_eq!(rs.kind(&mi(&[2], &[1])), IndexKind::Ignored);
        assert_eq!(rs.h6, Status::Pass);
    }

    #[test]
    fn threshold_tie_fails_h6() {
        let rs = classify(&[0.5, 0.7], 1.0, 1e-9).unwrap();
        assert!(rs.r_min.contains(&mi(&[1, 1], &[0, 0])));
        let tie = mi(&[2, 0], &[0, 0]);
        assert!(!rs.is_ignored(&tie));
        assert_eq!(rs.h6, Status::Fail);
        assert!(rs.ambiguous.contains(&tie));
    }

    #[test]
    fn no_modes() {
        let rs = classify(&[], 1.0, 1e-9).unwrap();
        assert!(rs.r_min.is_empty() && rs.lambda0.is_empty() && rs.groups.is_empty());
        assert_eq!(rs.k_max, 0);
        assert_eq!(rs.h6, Status::Pass);
    }

    #[test]
    fn rejects_out_of_gap() {
        assert!(classify(&[1.2], 1.0, 1e-9).is_err());
        assert!(classify(&[0.0], 1.0, 1e-9).is_err());
    }

    /// Direct transcription of the set definitions over all indices with norm <= 6.
    fn brute_force(l: &[f64], omega: f64) -> BTreeMap<MultiIndex, IndexKind> {
        let all = enumerate_indices(l.len(), 6);
        let resonant: Vec<&MultiIndex> =
            all.iter().filter(|m| m.lam(l).unwrap().abs() > omega).collect();
        let below = |a: &MultiIndex, b: &MultiIndex| {
            partial_order(a, b).unwrap() == Relation::Strict
        };
        let minimal: Vec<&MultiIndex> = resonant
            .iter()
            .filter(|m| !resonant.iter().any(|q| below(q, m)))
            .cloned()
            .collect();
        all.iter()
            .map(|m| {
                let kind = if minimal.contains(&m) {
                    IndexKind::MinimalResonant
                } else if minimal.iter().any(|r| below(r, m)) {
                    IndexKind::Ignored
                } else {
                    IndexKind::Nonresonant
                };
                (m.clone(), kind)
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(20240611);
        for _ in 0..200 {
            let n = rng.gen_range(1..=3);
            let omega = rng.gen_range(0.5..2.0);
            let l: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..0.9) * omega).collect();
            let rs = classify(&l, omega, 1e-9 * omega).unwrap();
            for (m, kind) in brute_force(&l, omega) {
                assert_eq!(rs.kind(&m), kind, "{m} for {l:?}");
                if kind == IndexKind::Nonresonant && m.norm() <= rs.k_max {
                    assert!(rs.nr.contains(&m));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn structural_invariants(
            l in proptest::collection::vec(0.1f64..0.9, 1..=3),
        ) {
            let rs = classify(&l, 1.0, 1e-9).unwrap();
            for a in &rs.r_min {
                prop_assert!(rs.r_min.contains(&a.conj()));
                prop_assert!(rs.lam(a).abs() > 1.0);
                for b in &rs.r_min {
                    prop_assert!(!strictly_below(a, b));
                }
            }
            for g in &rs.groups {
                prop_assert!(g.threshold > 1.0);
            }
            for (j, set) in rs.lambda_j.iter().enumerate() {
                prop_assert!(set.contains(&MultiIndex::unit_plus(j, l.len())));
            }
            prop_assert!(!rs.lambda0.iter().any(|m| m.is_zero()));
            for m in enumerate_indices(l.len(), rs.k_max) {
                let covered = rs.nr.contains(&m) as u8
                    + rs.r_min.contains(&m) as u8
                    + rs.is_ignored(&m) as u8;
                prop_assert_eq!(covered, 1);
            }
        }

        #[test]
        fn stable_under_small_frequency_shifts(
            l in proptest::collection::vec(0.1f64..0.9, 1..=2),
            s in -0.45f64..0.45,
        ) {
            let rs = classify(&l, 1.0, 1e-9).unwrap();
            prop_assume!(rs.margin > 1e-6);
            let shifted = classify(&l, 1.0 + s * rs.margin, 1e-9).unwrap();
            prop_assert_eq!(&shifted.r_min, &rs.r_min);
            prop_assert_eq!(&shifted.nr, &rs.nr);
        }
    }
}
