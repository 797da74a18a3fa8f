//! Occupancy configurations and exhaustive enumeration of the state space.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ArwError, Result};
use crate::graph::Graph;

/// Default limit on the number of enumerated configurations.
pub const DEFAULT_STATE_CAP: usize = 200_000;

/// Particle counts per vertex.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(Vec<u32>);

impl Configuration {
    pub fn new(occupancy: Vec<u32>) -> Self {
        Configuration(occupancy)
    }

    /// All `n` particles on vertex `v` of a `k`-vertex graph.
    pub fn concentrated(k: usize, n: u32, v: usize) -> Self {
        let mut occ = vec![0; k];
        occ[v] = n;
        Configuration(occ)
    }

    /// Round-robin spread of `n` particles over `k` vertices.
    pub fn spread(k: usize, n: u32) -> Self {
        let base = n / k as u32;
        let extra = (n % k as u32) as usize;
        Configuration((0..k).map(|v| base + u32::from(v < extra)).collect())
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn particles(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn occupancy(&self) -> &[u32] {
        &self.0
    }

    pub fn max_occupancy(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn min_occupancy(&self) -> u32 {
        self.0.iter().copied().min().unwrap_or(0)
    }

    /// `self - e_from + e_to`; `None` if `from` is empty.
    pub fn moved(&self, from: usize, to: usize) -> Option<Self> {
        if self.0[from] == 0 {
            return None;
        }
        let mut next = self.clone();
        next.apply_move(from, to);
        Some(next)
    }

    pub(crate) fn apply_move(&mut self, from: usize, to: usize) {
        self.0[from] -= 1;
        self.0[to] += 1;
    }

    /// If `other = self - e_i + e_j` for some `i != j`, returns `(i, j)`.
    pub fn single_move_to(&self, other: &Configuration) -> Option<(usize, usize)> {
        if self.k() != other.k() {
            return None;
        }
        let mut from = None;
        let mut to = None;
        for (v, (&a, &b)) in self.0.iter().zip(&other.0).enumerate() {
            match i64::from(b) - i64::from(a) {
                0 => {}
                -1 if from.is_none() => from = Some(v),
                1 if to.is_none() => to = Some(v),
                _ => return None,
            }
        }
        from.zip(to)
    }
}

impl std::ops::Index<usize> for Configuration {
    type Output = u32;
    fn index(&self, v: usize) -> &u32 {
        &self.0[v]
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (idx, c) in self.0.iter().enumerate() {
            if idx > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Binomial coefficient with saturation at `u128::MAX`.
pub fn binomial(n: u64, r: u64) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        // exact at every step: acc * (n - i) is divisible by (i + 1)
        acc = match acc.checked_mul(u128::from(n - i)) {
            Some(v) => v / u128::from(i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Number of ways to place `n` indistinguishable particles on `k` vertices.
pub fn state_count(k: usize, n: u32) -> u128 {
    if k == 0 {
        return 0;
    }
    binomial(u64::from(n) + k as u64 - 1, k as u64 - 1)
}

/// Lexicographically ordered list of every configuration of `n` particles
/// on `k` vertices, with combinatorial rank/unrank.
#[derive(Clone, Debug)]
pub struct StateSpace {
    k: usize,
    n: u32,
    flat: Vec<u32>,
    // ways[p][m]: compositions of m into p parts
    ways: Vec<Vec<u64>>,
}

impl StateSpace {
    pub fn enumerate(k: usize, n: u32) -> Result<Self> {
        Self::enumerate_with_cap(k, n, DEFAULT_STATE_CAP)
    }

    pub fn enumerate_with_cap(k: usize, n: u32, cap: usize) -> Result<Self> {
        if k == 0 {
            return Err(ArwError::ZeroDimension);
        }
        let size = state_count(k, n);
        if size > cap as u128 {
            return Err(ArwError::StateSpaceTooLarge { k, n: n as usize, size, cap });
        }
        let ways: Vec<Vec<u64>> = (0..=k)
            .map(|parts| {
                (0..=n).map(|m| if parts == 0 { u64::from(m == 0) } else { state_count(parts, m) as u64 }).collect()
            })
            .collect();
        let size = size as usize;
        let mut flat = Vec::with_capacity(size * k);
        let mut current = vec![0u32; k];
        current[k - 1] = n;
        // lexicographic successor: bump the rightmost position that still has
        // mass to its right, then push the leftover mass to the last slot
        loop {
            flat.extend_from_slice(&current);
            let mut suffix = 0;
            let mut grow = None;
            for p in (0..k - 1).rev() {
                suffix += current[p + 1];
                if suffix > 0 {
                    grow = Some(p);
                    break;
                }
            }
            let Some(p) = grow else { break };
            current[p] += 1;
            current[p + 1..].iter_mut().for_each(|v| *v = 0);
            current[k - 1] = suffix - 1;
        }
        debug_assert_eq!(flat.len(), size * k);
        Ok(StateSpace { k, n, flat, ways })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn len(&self) -> usize {
        self.flat.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn occupancy(&self, idx: usize) -> &[u32] {
        &self.flat[idx * self.k..(idx + 1) * self.k]
    }

    pub fn config(&self, idx: usize) -> Configuration {
        Configuration(self.occupancy(idx).to_vec())
    }

    pub fn iter(&self) -> impl Iterator<Item = Configuration> + '_ {
        self.flat.chunks_exact(self.k).map(|c| Configuration(c.to_vec()))
    }

    fn check(&self, occ: &[u32]) -> Result<()> {
        if occ.len() != self.k || occ.iter().sum::<u32>() != self.n {
            return Err(ArwError::InvalidConfiguration(occ.to_vec()));
        }
        Ok(())
    }

    /// Position of `x` in lexicographic order.
    pub fn rank(&self, x: &Configuration) -> Result<usize> {
        self.check(&x.0)?;
        Ok(self.rank_unchecked(&x.0))
    }

    pub(crate) fn rank_unchecked(&self, occ: &[u32]) -> usize {
        let mut remaining = self.n;
        let mut rank = 0u64;
        for (pos, &c) in occ.iter().enumerate().take(self.k - 1) {
            let parts_after = self.k - 1 - pos;
            // every smaller value at this position leaves remaining - v for the tail
            for v in 0..c {
                rank += self.ways[parts_after][(remaining - v) as usize];
            }
            remaining -= c;
        }
        rank as usize
    }

    pub fn unrank(&self, mut rank: usize) -> Result<Configuration> {
        if rank >= self.len() {
            return Err(ArwError::CapExceeded { what: "rank", size: rank, cap: self.len() });
        }
        let mut occ = vec![0u32; self.k];
        let mut remaining = self.n;
        for (pos, slot) in occ.iter_mut().enumerate().take(self.k - 1) {
            let parts_after = self.k - 1 - pos;
            let mut v = 0;
            loop {
                let block = self.ways[parts_after][(remaining - v) as usize] as usize;
                if rank < block {
                    break;
                }
                rank -= block;
                v += 1;
            }
            *slot = v;
            remaining -= v;
        }
        occ[self.k - 1] = remaining;
        Ok(Configuration(occ))
    }
}

/// A one-step move `from -> to`; `from == to` means the particle stayed.
pub type Move = (usize, usize);

/// Every configuration reachable in one step (including `x` itself), each
/// listed once with one move that produces it.
pub fn one_step_neighbors(x: &Configuration, g: &Graph) -> Vec<(Configuration, Move)> {
    let mut out = Vec::new();
    if let Some(first) = x.0.iter().position(|&c| c > 0) {
        out.push((x.clone(), (first, first)));
    }
    for i in (0..x.k()).filter(|&i| x[i] > 0) {
        for &j in g.neighbors(i) {
            let y = x.moved(i, j).expect("occupied source");
            out.push((y, (i, j)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::{HashMap, HashSet};

    use proptest::prelude::*;

    use super::*;

    fn cfg(v: &[u32]) -> Configuration {
        Configuration::new(v.to_vec())
    }

    #[test]
    fn small_enumerations() {
        let s = StateSpace::enumerate(2, 2).unwrap();
        let all: Vec<_> = s.iter().collect();
        assert_eq!(all, vec![cfg(&[0, 2]), cfg(&[1, 1]), cfg(&[2, 0])]);
        assert_eq!(StateSpace::enumerate(3, 2).unwrap().len(), 6);
        assert_eq!(StateSpace::enumerate(1, 5).unwrap().len(), 1);
        assert_eq!(StateSpace::enumerate(4, 0).unwrap().len(), 1);
    }

    #[test]
    fn cap_is_enforced() {
        let err = StateSpace::enumerate_with_cap(4, 100, 1000).unwrap_err();
        assert!(matches!(err, ArwError::StateSpaceTooLarge { size: 176_851, .. }));
    }

    #[test]
    fn order_is_lexicographic_and_rank_matches_hash_lookup() {
        for (k, n) in [(1, 3), (2, 5), (3, 4), (4, 6), (5, 3)] {
            let s = StateSpace::enumerate(k, n).unwrap();
            assert_eq!(s.len() as u128, state_count(k, n));
            let all: Vec<_> = s.iter().collect();
            assert!(all.windows(2).all(|w| w[0] < w[1]));
            let lookup: HashMap<_, _> = all.iter().cloned().enumerate().map(|(i, c)| (c, i)).collect();
            for (i, c) in all.iter().enumerate() {
                assert_eq!(s.rank(c).unwrap(), i);
                assert_eq!(lookup[c], i);
                assert_eq!(&s.unrank(i).unwrap(), c);
            }
        }
    }

    #[test]
    fn rank_rejects_foreign_configurations() {
        let s = StateSpace::enumerate(3, 4).unwrap();
        assert!(s.rank(&cfg(&[1, 1, 1])).is_err());
        assert!(s.rank(&cfg(&[4, 0])).is_err());
        assert!(s.unrank(s.len()).is_err());
    }

    #[test]
    fn neighbor_examples() {
        let k2 = Graph::complete(2).unwrap();
        let got: HashSet<_> = one_step_neighbors(&cfg(&[2, 0]), &k2).into_iter().map(|(c, _)| c).collect();
        assert_eq!(got, HashSet::from([cfg(&[2, 0]), cfg(&[1, 1])]));

        let p3 = Graph::path(3).unwrap();
        let got: HashSet<_> = one_step_neighbors(&cfg(&[0, 1, 0]), &p3).into_iter().map(|(c, _)| c).collect();
        assert_eq!(got, HashSet::from([cfg(&[0, 1, 0]), cfg(&[1, 0, 0]), cfg(&[0, 0, 1])]));

        let k3 = Graph::complete(3).unwrap();
        let got = one_step_neighbors(&cfg(&[1, 1, 0]), &k3);
        let distinct: HashSet<_> = got.iter().map(|(c, _)| c.clone()).collect();
        assert_eq!((got.len(), distinct.len()), (5, 5));
    }

    #[test]
    fn single_move_detection() {
        let x = cfg(&[2, 1, 0]);
        assert_eq!(x.single_move_to(&cfg(&[1, 1, 1])), Some((0, 2)));
        assert_eq!(x.single_move_to(&x), None);
        assert_eq!(x.single_move_to(&cfg(&[0, 2, 1])), None);
    }

    proptest! {
        #[test]
        fn neighbors_conserve_mass_and_reverse(occ in proptest::collection::vec(0u32..4, 2..6), shape in 0usize..3) {
            prop_assume!(occ.iter().sum::<u32>() > 0);
            let k = occ.len();
            let g = match shape {
                0 => Graph::path(k).unwrap(),
                1 => Graph::complete(k).unwrap(),
                _ => Graph::star(k).unwrap(),
            };
            let x = Configuration::new(occ);
            for (y, (i, j)) in one_step_neighbors(&x, &g) {
                prop_assert_eq!(y.particles(), x.particles());
                if i != j {
                    let back: Vec<_> = one_step_neighbors(&y, &g);
                    prop_assert!(back.iter().any(|(z, m)| z == &x && *m == (j, i)));
                }
            }
        }

        #[test]
        fn rank_unrank_inverse(k in 1usize..6, n in 0u32..7, seed in any::<u64>()) {
            let s = StateSpace::enumerate(k, n).unwrap();
            let idx = (seed % s.len() as u64) as usize;
            prop_assert_eq!(s.rank(&s.unrank(idx).unwrap()).unwrap(), idx);
        }
    }
}
