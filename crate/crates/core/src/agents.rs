//! Subsets of the agent index set `{0, .., n-1}` stored as a 64-bit mask.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Largest agent count the bitmask representation supports.
pub const MAX_AGENTS: usize = 64;

#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentSet(u64);

impl AgentSet {
    pub const EMPTY: AgentSet = AgentSet(0);

    pub fn from_bits(bits: u64) -> Self {
        AgentSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    /// The full set `{0, .., n-1}`.
    pub fn full(n: usize) -> Self {
        debug_assert!(n <= MAX_AGENTS);
        if n == MAX_AGENTS {
            AgentSet(u64::MAX)
        } else {
            AgentSet((1u64 << n) - 1)
        }
    }

    pub fn singleton(i: usize) -> Self {
        AgentSet(1u64 << i)
    }

    pub fn contains(self, i: usize) -> bool {
        i < MAX_AGENTS && self.0 >> i & 1 == 1
    }

    pub fn insert(&mut self, i: usize) {
        self.0 |= 1u64 << i;
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn complement(self, n: usize) -> Self {
        AgentSet(!self.0 & Self::full(n).0)
    }

    pub fn union(self, other: Self) -> Self {
        AgentSet(self.0 | other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        AgentSet(self.0 & other.0)
    }

    pub fn difference(self, other: Self) -> Self {
        AgentSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_disjoint(self, other: Self) -> bool {
        self.0 & other.0 == 0
    }

    /// Smallest member, if any.
    pub fn first(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    pub fn iter(self) -> Members {
        Members(self.0)
    }

    /// Relabel members through `sigma` (member `i` becomes `sigma[i]`).
    pub fn map(self, sigma: &[usize]) -> Self {
        self.iter().map(|i| sigma[i]).collect()
    }
}

/// Iterator over the members of an [`AgentSet`] in increasing order.
pub struct Members(u64);

impl Iterator for Members {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let i = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(i)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let c = self.0.count_ones() as usize;
        (c, Some(c))
    }
}

impl FromIterator<usize> for AgentSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = AgentSet::EMPTY;
        for i in iter {
            s.insert(i);
        }
        s
    }
}

impl fmt::Debug for AgentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for AgentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Serialize for AgentSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for AgentSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let members = Vec::<usize>::deserialize(d)?;
        if let Some(&bad) = members.iter().find(|&&i| i >= MAX_AGENTS) {
            return Err(serde::de::Error::custom(format!(
                "agent index {bad} out of range"
            )));
        }
        Ok(members.into_iter().collect())
    }
}

/// Enumerate every subset of `{0, .., n-1}` by bitmask order, empty set first.
pub fn all_subsets(n: usize) -> impl Iterator<Item = AgentSet> {
    debug_assert!(n < MAX_AGENTS);
    (0u64..(1u64 << n)).map(AgentSet)
}

/// Nonempty proper subsets of `universe`, in increasing bitmask order.
pub fn proper_subsets_of(universe: AgentSet) -> impl Iterator<Item = AgentSet> {
    let members: Vec<usize> = universe.iter().collect();
    let k = members.len();
    let count = if k == 0 { 0 } else { (1u64 << k) - 1 };
    (1..count).map(move |code| {
        members
            .iter()
            .enumerate()
            .filter(|(b, _)| code >> b & 1 == 1)
            .map(|(_, &i)| i)
            .collect()
    })
}

/// Subsets of `{0, .., n-1}` with exactly `k` members, in increasing bitmask order.
pub fn subsets_of_size(n: usize, k: usize) -> impl Iterator<Item = AgentSet> {
    all_subsets(n).filter(move |s| s.len() == k)
}
