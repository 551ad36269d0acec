//! Domain types for nodes, the Byzantine partition, activation vectors, and
//! the activation universe.
//!
//! Node ids are 1-based in configs and reports, 0-based everywhere inside the
//! crate; `NodePartition::from_one_based` is the only place the mapping
//! happens.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// The node set `{0..n-1}` split into Byzantine and good nodes. The Byzantine
/// set is fixed for the lifetime of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodePartition {
    n: usize,
    byzantine: BTreeSet<usize>,
}

impl NodePartition {
    /// Partition with 0-based Byzantine indices.
    pub fn new(n: usize, byzantine: BTreeSet<usize>) -> Result<Self> {
        if n == 0 {
            return Err(Error::DimensionMismatch {
                context: "node count",
                expected: 1,
                got: 0,
            });
        }
        if let Some(&id) = byzantine.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidNodeId { id: id + 1, n });
        }
        Ok(Self { n, byzantine })
    }

    /// Partition from 1-based node ids, as they appear in configs.
    pub fn from_one_based(n: usize, ids: &[usize]) -> Result<Self> {
        let mut byzantine = BTreeSet::new();
        for &id in ids {
            if id == 0 || id > n {
                return Err(Error::InvalidNodeId { id, n });
            }
            byzantine.insert(id - 1);
        }
        Self::new(n, byzantine)
    }

    /// All-good partition.
    pub fn all_good(n: usize) -> Self {
        Self::new(n, BTreeSet::new()).expect("n >= 1")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_byzantine(&self, node: usize) -> bool {
        self.byzantine.contains(&node)
    }

    pub fn byzantine(&self) -> &BTreeSet<usize> {
        &self.byzantine
    }

    pub fn good(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(|i| !self.byzantine.contains(i))
    }
}

/// A binary participation pattern `u` over the `n` nodes. At least one node
/// is active; all-inactive rounds produce no observation and are excluded
/// from every universe by construction.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActivationVector {
    bits: Vec<bool>,
}

impl ActivationVector {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if !bits.iter().any(|&b| b) {
            return Err(Error::EmptyActivation);
        }
        Ok(Self { bits })
    }

    /// Vector with only `node` active.
    pub fn singleton(n: usize, node: usize) -> Self {
        let mut bits = vec![false; n];
        bits[node] = true;
        Self { bits }
    }

    /// From 0/1 integers, as used in configs and JSON instances.
    pub fn from_ints(ints: &[u8]) -> Result<Self> {
        Self::new(ints.iter().map(|&b| b != 0).collect())
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_active(&self, node: usize) -> bool {
        self.bits[node]
    }

    pub fn active_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn count_active(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// True if any active node is Byzantine.
    pub fn touches_byzantine(&self, partition: &NodePartition) -> bool {
        self.active_nodes().any(|i| partition.is_byzantine(i))
    }
}

impl fmt::Debug for ActivationVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u(")?;
        for &b in &self.bits {
            write!(f, "{}", u8::from(b))?;
        }
        write!(f, ")")
    }
}

impl Serialize for ActivationVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.bits.iter().map(|&b| u8::from(b)))
    }
}

impl<'de> Deserialize<'de> for ActivationVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let ints = Vec::<u8>::deserialize(deserializer)?;
        ActivationVector::from_ints(&ints).map_err(serde::de::Error::custom)
    }
}

/// How to generate the state space of the activation chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniverseMode {
    /// One member per node, member `i` activating exactly node `i`.
    Singletons,
    /// Every nonzero binary vector of length `n`, in lexicographic order.
    AllNonemptySubsets,
    /// Caller-supplied members, deduplicated, in the given order.
    Custom(Vec<ActivationVector>),
    /// `count` uniformly random subsets of exactly `size` nodes,
    /// deduplicated and sorted lexicographically.
    RandomSubsets { count: usize, size: usize, seed: u64 },
}

/// The finite, ordered state space of the activation Markov chain. The
/// member order is fixed at construction and determines the row-block order
/// of the stacked observation matrix.
#[derive(Debug, Clone)]
pub struct ActivationUniverse {
    members: Vec<ActivationVector>,
    index: HashMap<ActivationVector, usize>,
    n: usize,
}

impl ActivationUniverse {
    fn from_members(members: Vec<ActivationVector>, n: usize) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyUniverse);
        }
        let mut index = HashMap::with_capacity(members.len());
        for (pos, m) in members.iter().enumerate() {
            if m.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "universe member length",
                    expected: n,
                    got: m.len(),
                });
            }
            index.insert(m.clone(), pos);
        }
        debug_assert_eq!(index.len(), members.len());
        Ok(Self { members, index, n })
    }

    pub fn members(&self) -> &[ActivationVector] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Number of nodes (length of every member).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn member(&self, pos: usize) -> &ActivationVector {
        &self.members[pos]
    }

    pub fn index_of(&self, u: &ActivationVector) -> Option<usize> {
        self.index.get(u).copied()
    }
}

/// Build the activation universe for `n` nodes.
///
/// Generated modes are deterministically ordered: singletons by node index,
/// subsets lexicographically. Custom lists keep their order with duplicates
/// dropped.
pub fn build_universe(mode: &UniverseMode, n: usize) -> Result<ActivationUniverse> {
    if n == 0 {
        return Err(Error::DimensionMismatch {
            context: "node count",
            expected: 1,
            got: 0,
        });
    }
    let members = match mode {
        UniverseMode::Singletons => (0..n).map(|i| ActivationVector::singleton(n, i)).collect(),
        UniverseMode::AllNonemptySubsets => {
            let mut members = Vec::with_capacity((1usize << n) - 1);
            // Counting with node 0 as the most significant bit yields
            // lexicographic order directly.
            for code in 1u64..(1u64 << n) {
                let bits = (0..n).map(|i| code >> (n - 1 - i) & 1 == 1).collect();
                members.push(ActivationVector::new(bits).expect("code >= 1"));
            }
            members
        }
        UniverseMode::Custom(list) => {
            if list.is_empty() {
                return Err(Error::EmptyUniverse);
            }
            let mut seen = HashMap::new();
            let mut members = Vec::new();
            for v in list {
                if v.len() != n {
                    return Err(Error::DimensionMismatch {
                        context: "custom universe member",
                        expected: n,
                        got: v.len(),
                    });
                }
                if seen.insert(v.clone(), ()).is_none() {
                    members.push(v.clone());
                }
            }
            members
        }
        UniverseMode::RandomSubsets { count, size, seed } => {
            if *size == 0 || *size > n {
                return Err(Error::InvalidSubsetSize { size: *size, n });
            }
            if *count == 0 {
                return Err(Error::EmptyUniverse);
            }
            let mut rng = ChaCha12Rng::seed_from_u64(*seed);
            let mut set = BTreeSet::new();
            for _ in 0..*count {
                let mut bits = vec![false; n];
                for i in sample(&mut rng, n, *size) {
                    bits[i] = true;
                }
                set.insert(ActivationVector::new(bits).expect("size >= 1"));
            }
            set.into_iter().collect()
        }
    };
    ActivationUniverse::from_members(members, n)
}

/// Indices of universe members that activate at least one Byzantine node
/// (the corrupted block set).
pub fn byzantine_blocks(
    universe: &ActivationUniverse,
    partition: &NodePartition,
) -> Result<BTreeSet<usize>> {
    if universe.n() != partition.n() {
        return Err(Error::DimensionMismatch {
            context: "byzantine_blocks",
            expected: partition.n(),
            got: universe.n(),
        });
    }
    Ok(universe
        .members()
        .iter()
        .enumerate()
        .filter_map(|(pos, u)| u.touches_byzantine(partition).then_some(pos))
        .collect())
}
