//! Finitely supported multi-indices and lower (downward closed) sets.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::affine::WeightSequence;
use crate::error::{Error, Result};

/// Sparse exponent vector. Directions are 0-based internally and printed
/// 1-based. Ordered by total degree, then lexicographically on the dense
/// exponent sequence `(nu_1, nu_2, ...)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct MultiIndex {
    entries: Vec<(u32, u32)>,
}

impl MultiIndex {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn unit(j: usize) -> Self {
        Self {
            entries: vec![(j as u32, 1)],
        }
    }

    /// Builds from `(direction, exponent)` pairs; zero exponents are dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, u32)>) -> Result<Self> {
        let mut entries: Vec<(u32, u32)> = pairs
            .into_iter()
            .filter(|&(_, e)| e > 0)
            .map(|(j, e)| (j as u32, e))
            .collect();
        entries.sort_unstable();
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument("repeated direction in multi-index".into()));
        }
        Ok(Self { entries })
    }

    pub fn from_dense(exponents: &[u32]) -> Self {
        Self {
            entries: exponents
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(j, &e)| (j as u32, e))
                .collect(),
        }
    }

    pub fn get(&self, j: usize) -> u32 {
        match self.entries.binary_search_by_key(&(j as u32), |&(d, _)| d) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0,
        }
    }

    pub fn degree(&self) -> u32 {
        self.entries.iter().map(|&(_, e)| e).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(direction, exponent)` pairs with positive exponent, by direction.
    pub fn support(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.entries.iter().map(|&(j, e)| (j as usize, e))
    }

    /// Largest direction used plus one.
    pub fn span(&self) -> usize {
        self.entries.last().map_or(0, |&(j, _)| j as usize + 1)
    }

    pub fn increment(&self, j: usize) -> Self {
        let mut entries = self.entries.clone();
        match entries.binary_search_by_key(&(j as u32), |&(d, _)| d) {
            Ok(i) => entries[i].1 += 1,
            Err(i) => entries.insert(i, (j as u32, 1)),
        }
        Self { entries }
    }

    /// `nu - e_j`, if `nu_j > 0`.
    pub fn decrement(&self, j: usize) -> Option<Self> {
        let i = self
            .entries
            .binary_search_by_key(&(j as u32), |&(d, _)| d)
            .ok()?;
        let mut entries = self.entries.clone();
        if entries[i].1 == 1 {
            entries.remove(i);
        } else {
            entries[i].1 -= 1;
        }
        Some(Self { entries })
    }

    /// All `nu - e_j` with `nu_j > 0`, paired with `j`.
    pub fn backward_neighbors(&self) -> impl Iterator<Item = (usize, MultiIndex)> + '_ {
        self.entries.iter().map(move |&(j, _)| {
            let j = j as usize;
            (j, self.decrement(j).expect("direction in support"))
        })
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.entries.iter().all(|&(j, e)| other.get(j as usize) >= e)
    }

    fn dense_lex_cmp(&self, other: &MultiIndex) -> Ordering {
        let (mut a, mut b) = (self.entries.iter().peekable(), other.entries.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (None, None) => return Ordering::Equal,
                // The side that still has a nonzero entry at the first differing
                // direction has the larger exponent there.
                (Some(_), None) => return Ordering::Greater,
                (None, Some(_)) => return Ordering::Less,
                (Some(&&(ja, ea)), Some(&&(jb, eb))) => match ja.cmp(&jb) {
                    Ordering::Less => return Ordering::Greater,
                    Ordering::Greater => return Ordering::Less,
                    Ordering::Equal => match ea.cmp(&eb) {
                        Ordering::Equal => {
                            a.next();
                            b.next();
                        }
                        ord => return ord,
                    },
                },
            }
        }
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.dense_lex_cmp(other))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    /// `j:exponent` pairs separated by spaces (1-based `j`); `0` for the null index.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.entries.is_empty() {
            return write!(f, "0");
        }
        for (i, &(j, e)) in self.entries.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{}:{}", j + 1, e)?;
        }
        Ok(())
    }
}

impl std::str::FromStr for MultiIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "0" {
            return Ok(Self::zero());
        }
        let pairs = s
            .split_whitespace()
            .map(|tok| {
                let (j, e) = tok
                    .split_once(':')
                    .ok_or_else(|| Error::Parse(format!("expected j:exponent, got {tok:?}")))?;
                let j: usize = j.parse().map_err(|_| Error::Parse(format!("bad direction {j:?}")))?;
                let e: u32 = e.parse().map_err(|_| Error::Parse(format!("bad exponent {e:?}")))?;
                if j == 0 {
                    return Err(Error::Parse("directions are numbered from 1".into()));
                }
                Ok((j - 1, e))
            })
            .collect::<Result<Vec<_>>>()?;
        if pairs.is_empty() {
            return Err(Error::Parse("empty multi-index".into()));
        }
        Self::from_pairs(pairs)
    }
}

pub fn monomial(y: &[f64], nu: &MultiIndex) -> f64 {
    nu.support()
        .map(|(j, e)| y.get(j).copied().unwrap_or(0.0).powi(e as i32))
        .product()
}

/// True iff the set contains the null index and every backward neighbour of
/// each member.
pub fn is_lower(set: &[MultiIndex]) -> bool {
    let members: std::collections::HashSet<&MultiIndex> = set.iter().collect();
    members.contains(&MultiIndex::zero())
        && set
            .iter()
            .all(|nu| nu.backward_neighbors().all(|(_, b)| members.contains(&b)))
}

/// Lower set in insertion order. Every prefix of the insertion order is
/// itself lower.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerSet {
    items: Vec<MultiIndex>,
    position: HashMap<MultiIndex, usize>,
}

impl Default for LowerSet {
    fn default() -> Self {
        Self::new()
    }
}

impl LowerSet {
    /// `{0}`.
    pub fn new() -> Self {
        let zero = MultiIndex::zero();
        let mut position = HashMap::new();
        position.insert(zero.clone(), 0);
        Self {
            items: vec![zero],
            position,
        }
    }

    /// Accepts any lower family of distinct indices; reorders it by
    /// [`MultiIndex`] order if the given order has a non-lower prefix.
    pub fn from_indices(indices: Vec<MultiIndex>) -> Result<Self> {
        if !is_lower(&indices) {
            return Err(Error::NotLower);
        }
        let mut set = Self {
            items: Vec::with_capacity(indices.len()),
            position: HashMap::new(),
        };
        let ordered = if prefix_lower(&indices) {
            indices
        } else {
            let mut v = indices;
            v.sort();
            v
        };
        for nu in ordered {
            if set.position.contains_key(&nu) {
                return Err(Error::InvalidArgument(format!("duplicate index {nu}")));
            }
            set.position.insert(nu.clone(), set.items.len());
            set.items.push(nu);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, nu: &MultiIndex) -> bool {
        self.position.contains_key(nu)
    }

    pub fn position(&self, nu: &MultiIndex) -> Option<usize> {
        self.position.get(nu).copied()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MultiIndex> {
        self.items.iter()
    }

    pub fn as_slice(&self) -> &[MultiIndex] {
        &self.items
    }

    /// Adds `nu`, which must have all backward neighbours present.
    pub fn push(&mut self, nu: MultiIndex) -> Result<()> {
        if self.contains(&nu) {
            return Err(Error::InvalidArgument(format!("{nu} already present")));
        }
        if !nu.backward_neighbors().all(|(_, b)| self.contains(&b)) {
            return Err(Error::NotLower);
        }
        self.position.insert(nu.clone(), self.items.len());
        self.items.push(nu);
        Ok(())
    }

    /// First `k` indices (still lower).
    pub fn prefix(&self, k: usize) -> LowerSet {
        let items: Vec<MultiIndex> = self.items[..k.min(self.len())].to_vec();
        let position = items.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        LowerSet { items, position }
    }

    /// Largest direction used plus one.
    pub fn span(&self) -> usize {
        self.items.iter().map(MultiIndex::span).max().unwrap_or(0)
    }

    /// One index per line, in insertion order.
    pub fn to_text(&self) -> String {
        self.items.iter().map(|nu| format!("{nu}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let indices = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::parse)
            .collect::<Result<Vec<MultiIndex>>>()?;
        Self::from_indices(indices)
    }
}

fn prefix_lower(indices: &[MultiIndex]) -> bool {
    let mut seen = std::collections::HashSet::new();
    for nu in indices {
        if !nu.backward_neighbors().all(|(_, b)| seen.contains(&b)) {
            return false;
        }
        seen.insert(nu.clone());
    }
    true
}

/// `{nu not in lam : nu - e_j in lam for all j with nu_j > 0}` over
/// directions `0..active_dims`, in [`MultiIndex`] order.
pub fn reduced_margin(lam: &LowerSet, active_dims: usize) -> BTreeSet<MultiIndex> {
    let mut margin = BTreeSet::new();
    for nu in lam.iter() {
        for j in 0..active_dims {
            let cand = nu.increment(j);
            if !lam.contains(&cand) && cand.backward_neighbors().all(|(_, b)| lam.contains(&b)) {
                margin.insert(cand);
            }
        }
    }
    margin
}

/// Incrementally maintained reduced margin.
#[derive(Debug, Clone)]
pub(crate) struct Margin {
    active_dims: usize,
    members: BTreeSet<MultiIndex>,
}

impl Margin {
    pub(crate) fn of(lam: &LowerSet, active_dims: usize) -> Self {
        Self {
            active_dims,
            members: reduced_margin(lam, active_dims),
        }
    }

    pub(crate) fn members(&self) -> &BTreeSet<MultiIndex> {
        &self.members
    }

    /// Moves `nu` from the margin into `lam` and returns the new margin entries.
    pub(crate) fn absorb(&mut self, lam: &mut LowerSet, nu: MultiIndex) -> Result<Vec<MultiIndex>> {
        if !self.members.remove(&nu) {
            return Err(Error::InvalidArgument(format!("{nu} is not in the reduced margin")));
        }
        lam.push(nu.clone())?;
        let mut added = Vec::new();
        for j in 0..self.active_dims {
            let cand = nu.increment(j);
            if cand.backward_neighbors().all(|(_, b)| lam.contains(&b)) && self.members.insert(cand.clone()) {
                added.push(cand);
            }
        }
        Ok(added)
    }
}

/// `-ln(rho^{-nu}) = sum_j nu_j ln rho_j`.
fn log_weight(log_rho: &[f64], nu: &MultiIndex) -> f64 {
    nu.support()
        .map(|(j, e)| e as f64 * log_rho.get(j).copied().unwrap_or(f64::INFINITY))
        .sum()
}

/// `m` indices with the largest `rho^{-nu}`; equal values go to the smaller
/// index in [`MultiIndex`] order. Grown from the reduced margin, so every
/// prefix is lower and the `m`-set is a prefix of the `(m+1)`-set.
pub fn apriori_select(w: &WeightSequence, m: usize, active_dims: usize) -> Result<LowerSet> {
    if m < 1 {
        return Err(Error::InvalidArgument("need at least one term".into()));
    }
    let dims = active_dims.min(w.len());
    let log_rho: Vec<f64> = w.rho()[..dims].iter().map(|r| r.ln()).collect();
    let mut lam = LowerSet::new();
    let mut margin = Margin::of(&lam, dims);
    while lam.len() < m {
        let best = margin
            .members()
            .iter()
            .map(|nu| (log_weight(&log_rho, nu), nu))
            .min_by(|a, b| {
                let tol = 1e-12 * a.0.abs().max(b.0.abs()).max(1.0);
                if (a.0 - b.0).abs() <= tol {
                    a.1.cmp(b.1)
                } else {
                    a.0.total_cmp(&b.0)
                }
            })
            .map(|(_, nu)| nu.clone());
        match best {
            Some(nu) => {
                margin.absorb(&mut lam, nu)?;
            }
            None => break,
        }
    }
    Ok(lam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mi(dense: &[u32]) -> MultiIndex {
        MultiIndex::from_dense(dense)
    }

    #[test]
    fn monomials() {
        assert_eq!(monomial(&[0.3, 0.2], &MultiIndex::zero()), 1.0);
        assert_eq!(monomial(&[0.5, 0.2], &MultiIndex::unit(0)), 0.5);
        assert_eq!(monomial(&[0.5, -1.0, 0.7], &mi(&[2, 1])), -0.25);
    }

    #[test]
    fn lower_checks() {
        assert!(is_lower(&[mi(&[]), mi(&[1]), mi(&[0, 1]), mi(&[1, 1])]));
        assert!(!is_lower(&[mi(&[]), mi(&[2])]));
        assert!(!is_lower(&[]));
    }

    #[test]
    fn margins() {
        let zero = LowerSet::new();
        let r: Vec<_> = reduced_margin(&zero, 3).into_iter().collect();
        assert_eq!(r.len(), 3);
        assert!(r.contains(&mi(&[1])) && r.contains(&mi(&[0, 1])) && r.contains(&mi(&[0, 0, 1])));

        let lam = LowerSet::from_indices(vec![mi(&[]), mi(&[1])]).unwrap();
        let r = reduced_margin(&lam, 2);
        assert_eq!(r.len(), 2);
        assert!(r.contains(&mi(&[2])) && r.contains(&mi(&[0, 1])));
    }

    #[test]
    fn ordering_is_degree_then_dense_lex() {
        assert!(mi(&[0, 1]) < mi(&[1]));
        assert!(mi(&[1]) < mi(&[2]));
        assert!(mi(&[0, 2]) < mi(&[1, 1]));
        assert!(mi(&[1, 1]) < mi(&[2]));
        assert_eq!(mi(&[1, 0, 3]).cmp(&mi(&[1, 0, 3])), Ordering::Equal);
    }

    #[test]
    fn apriori_small_cases() {
        let w = WeightSequence::new(vec![2.0, 4.0], 1.0).unwrap();
        assert_eq!(apriori_select(&w, 1, 2).unwrap().as_slice(), &[mi(&[])]);
        let lam = apriori_select(&w, 3, 2).unwrap();
        assert_eq!(lam.as_slice(), &[mi(&[]), mi(&[1]), mi(&[0, 1])]);
        assert!(apriori_select(&w, 0, 2).is_err());
    }

    /// Brute-force oracle: enumerate every index with |nu| <= 4 and sort by
    /// (rho^{-nu} descending, MultiIndex order).
    #[test]
    fn apriori_matches_enumeration() {
        let w = WeightSequence::new(vec![2.0, 4.0], 1.0).unwrap();
        let mut all = Vec::new();
        for a in 0..=4u32 {
            for b in 0..=(4 - a) {
                all.push(mi(&[a, b]));
            }
        }
        let value = |nu: &MultiIndex| 2f64.powi(-(nu.get(0) as i32)) * 4f64.powi(-(nu.get(1) as i32));
        all.sort_by(|x, y| value(y).partial_cmp(&value(x)).unwrap().then_with(|| x.cmp(y)));
        // Entries beyond degree 4 cannot beat 2^-4 = 1/16; compare the first 6.
        let lam = apriori_select(&w, 6, 2).unwrap();
        assert_eq!(lam.as_slice(), &all[..6]);
    }

    #[test]
    fn text_round_trip() {
        let lam = LowerSet::from_indices(vec![mi(&[]), mi(&[1]), mi(&[0, 1]), mi(&[2]), mi(&[1, 1])])
            .unwrap();
        let text = lam.to_text();
        assert!(text.contains("1:1 2:1"));
        assert_eq!(LowerSet::from_text(&text).unwrap(), lam);
        assert!(LowerSet::from_text("0\n1:2\n").is_err());
    }

    fn weights_strategy() -> impl Strategy<Value = WeightSequence> {
        prop::collection::vec(0.0f64..3.0, 1..6).prop_map(|incs| {
            let mut rho = Vec::new();
            let mut r = 1.05;
            for d in incs {
                r += d;
                rho.push(r);
            }
            WeightSequence::new(rho, 1.0).unwrap()
        })
    }

    proptest! {
        #[test]
        fn apriori_invariants(w in weights_strategy(), m in 1usize..40) {
            let dims = w.len();
            let small = apriori_select(&w, m, dims).unwrap();
            let big = apriori_select(&w, m + 1, dims).unwrap();
            prop_assert!(is_lower(small.as_slice()));
            prop_assert_eq!(small.as_slice(), &big.as_slice()[..m]);

            let log_rho: Vec<f64> = w.rho().iter().map(|r| r.ln()).collect();
            let worst_in = small.iter().map(|nu| log_weight(&log_rho, nu)).fold(0.0, f64::max);
            let margin = reduced_margin(&small, dims);
            for nu in &margin {
                prop_assert!(!small.contains(nu));
                prop_assert!(log_weight(&log_rho, nu) >= worst_in - 1e-12);
                let mut grown = small.as_slice().to_vec();
                grown.push(nu.clone());
                prop_assert!(is_lower(&grown));
            }
        }
    }
}
