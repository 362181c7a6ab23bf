//! Architecture search spaces.
//!
//! Two shapes are supported: cell spaces, where a fixed DAG topology carries
//! one operation label per edge, and ordinal spaces, where an architecture is
//! a vector of discrete levels. Either kind has a canonical string identity
//! ([`ArchitectureId`]) with a kind prefix, `c:` or `o:`, followed by the
//! dot-separated choice indices.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, stream};

/// Default upper bound on the number of architectures `enumerate` will list.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Operation vocabulary of the NATS-Bench topology space.
pub const NATS_OPS: [&str; 5] = [
    "none",
    "skip_connect",
    "nor_conv_1x1",
    "nor_conv_3x3",
    "avg_pool_3x3",
];

/// Canonical architecture identity.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArchitectureId(String);

impl ArchitectureId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ArchitectureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ArchitectureId {
    fn from(s: &str) -> Self {
        ArchitectureId(s.to_owned())
    }
}

/// A labelled-DAG cell: fixed edges, one operation index per edge.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CellArchitecture {
    pub node_count: usize,
    pub edges: Arc<[(usize, usize)]>,
    pub ops: Vec<u16>,
}

/// A point of an ordinal space: one level per dimension.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OrdinalArchitecture {
    pub levels: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    Cell(CellArchitecture),
    Ordinal(OrdinalArchitecture),
}

impl Architecture {
    /// The choice vector: edge operations for a cell, levels for an ordinal point.
    pub fn choices(&self) -> &[u16] {
        match self {
            Architecture::Cell(c) => &c.ops,
            Architecture::Ordinal(o) => &o.levels,
        }
    }

    pub fn kind(&self) -> SpaceKind {
        match self {
            Architecture::Cell(_) => SpaceKind::Cell,
            Architecture::Ordinal(_) => SpaceKind::Ordinal,
        }
    }

    /// Number of positions at which two architectures of the same space differ.
    pub fn hamming(&self, other: &Architecture) -> usize {
        self.choices()
            .iter()
            .zip(other.choices())
            .filter(|(a, b)| a != b)
            .count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Cell,
    Ordinal,
}

/// Search-space definition. The prior over the space is uniform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceConfig {
    Cell {
        node_count: usize,
        edges: Vec<(usize, usize)>,
        vocab: Vec<String>,
    },
    Ordinal {
        cardinalities: Vec<u16>,
    },
}

impl SpaceConfig {
    /// The NATS-Bench topology space: 4 nodes, 6 edges, 5 operations.
    pub fn nats() -> Self {
        Self::cell_with_ops(4, &NATS_OPS)
    }

    /// A fully-connected forward DAG over `node_count` nodes with the given vocabulary.
    pub fn cell_with_ops(node_count: usize, ops: &[&str]) -> Self {
        let mut edges = Vec::new();
        for dst in 1..node_count {
            for src in 0..dst {
                edges.push((src, dst));
            }
        }
        SpaceConfig::Cell {
            node_count,
            edges,
            vocab: ops.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn ordinal(dims: usize, levels: u16) -> Self {
        SpaceConfig::Ordinal {
            cardinalities: vec![levels; dims],
        }
    }

    /// The slimmable-network shape: 7 blocks of up to 4 layers, as 28 four-level dimensions.
    pub fn slimmable() -> Self {
        Self::ordinal(28, 4)
    }

    pub fn kind(&self) -> SpaceKind {
        match self {
            SpaceConfig::Cell { .. } => SpaceKind::Cell,
            SpaceConfig::Ordinal { .. } => SpaceKind::Ordinal,
        }
    }

    /// Number of choice positions (edges or dimensions).
    pub fn positions(&self) -> usize {
        match self {
            SpaceConfig::Cell { edges, .. } => edges.len(),
            SpaceConfig::Ordinal { cardinalities } => cardinalities.len(),
        }
    }

    pub fn cardinality(&self, position: usize) -> u16 {
        match self {
            SpaceConfig::Cell { vocab, .. } => vocab.len() as u16,
            SpaceConfig::Ordinal { cardinalities } => cardinalities[position],
        }
    }

    /// |A|, saturating at `u128::MAX`.
    pub fn size(&self) -> u128 {
        (0..self.positions())
            .map(|p| self.cardinality(p) as u128)
            .fold(1u128, |acc, c| acc.saturating_mul(c))
    }

    /// Prior mass of every architecture under the uniform prior.
    pub fn prior_mass(&self) -> f64 {
        1.0 / self.size() as f64
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SpaceConfig::Cell {
                node_count,
                edges,
                vocab,
            } => {
                if vocab.is_empty() || vocab.len() > u16::MAX as usize {
                    return Err(Error::Config("cell vocabulary must be non-empty".into()));
                }
                for &(s, t) in edges {
                    if s >= t || t >= *node_count {
                        return Err(Error::Config(format!(
                            "edge ({s},{t}) is not a forward edge over {node_count} nodes"
                        )));
                    }
                }
                Ok(())
            }
            SpaceConfig::Ordinal { cardinalities } => {
                if cardinalities.contains(&0) {
                    return Err(Error::Config("ordinal cardinalities must be ≥ 1".into()));
                }
                Ok(())
            }
        }
    }

    fn prefix(&self) -> &'static str {
        match self {
            SpaceConfig::Cell { .. } => "c:",
            SpaceConfig::Ordinal { .. } => "o:",
        }
    }

    fn check_choices(&self, choices: &[u16]) -> Result<()> {
        if choices.len() != self.positions() {
            return Err(Error::InvalidArchitecture(format!(
                "expected {} positions, got {}",
                self.positions(),
                choices.len()
            )));
        }
        for (p, &c) in choices.iter().enumerate() {
            if c >= self.cardinality(p) {
                return Err(Error::InvalidArchitecture(format!(
                    "choice {c} at position {p} outside [0, {})",
                    self.cardinality(p)
                )));
            }
        }
        Ok(())
    }

    /// Builds an architecture of this space from a raw choice vector.
    pub fn architecture(&self, choices: Vec<u16>) -> Result<Architecture> {
        self.check_choices(&choices)?;
        Ok(match self {
            SpaceConfig::Cell {
                node_count, edges, ..
            } => Architecture::Cell(CellArchitecture {
                node_count: *node_count,
                edges: edges.clone().into(),
                ops: choices,
            }),
            SpaceConfig::Ordinal { .. } => {
                Architecture::Ordinal(OrdinalArchitecture { levels: choices })
            }
        })
    }

    /// Canonical, injective string encoding of an architecture.
    pub fn encode(&self, arch: &Architecture) -> Result<ArchitectureId> {
        if arch.kind() != self.kind() {
            return Err(Error::InvalidArchitecture(format!(
                "{:?} architecture in a {:?} space",
                arch.kind(),
                self.kind()
            )));
        }
        if let (Architecture::Cell(c), SpaceConfig::Cell { edges, .. }) = (arch, self) {
            if c.edges.as_ref() != edges.as_slice() {
                return Err(Error::InvalidArchitecture(
                    "cell topology differs from the space topology".into(),
                ));
            }
        }
        self.encode_choices(arch.choices())
    }

    pub(crate) fn encode_choices(&self, choices: &[u16]) -> Result<ArchitectureId> {
        self.check_choices(choices)?;
        Ok(ArchitectureId(Self::format_choices(self.prefix(), choices)))
    }

    fn format_choices(prefix: &str, choices: &[u16]) -> String {
        let mut s = String::with_capacity(prefix.len() + choices.len() * 2);
        s.push_str(prefix);
        for (i, c) in choices.iter().enumerate() {
            if i > 0 {
                s.push('.');
            }
            s.push_str(&c.to_string());
        }
        s
    }

    pub fn decode(&self, id: &ArchitectureId) -> Result<Architecture> {
        let body = id.0.strip_prefix(self.prefix()).ok_or_else(|| {
            Error::InvalidArchitecture(format!("{id} does not carry the {} prefix", self.prefix()))
        })?;
        let choices = if body.is_empty() {
            Vec::new()
        } else {
            body.split('.')
                .map(|t| {
                    t.parse::<u16>()
                        .map_err(|_| Error::InvalidArchitecture(format!("bad token {t:?} in {id}")))
                })
                .collect::<Result<Vec<_>>>()?
        };
        self.architecture(choices)
    }

    pub fn contains(&self, id: &ArchitectureId) -> bool {
        self.decode(id).is_ok()
    }

    /// I.i.d. uniform draws, with replacement.
    pub fn sample_prior(&self, seed: u64, n: usize) -> Vec<ArchitectureId> {
        let mut rng = seeded(seed, stream::PRIOR);
        (0..n).map(|_| self.sample_one(&mut rng)).collect()
    }

    pub(crate) fn sample_one<R: Rng>(&self, rng: &mut R) -> ArchitectureId {
        let choices: Vec<u16> = (0..self.positions())
            .map(|p| rng.random_range(0..self.cardinality(p)))
            .collect();
        ArchitectureId(Self::format_choices(self.prefix(), &choices))
    }

    /// Every architecture, lexicographically ordered by id.
    pub fn enumerate(&self) -> Result<Vec<ArchitectureId>> {
        self.enumerate_capped(DEFAULT_ENUMERATION_CAP)
    }

    pub fn enumerate_capped(&self, cap: u128) -> Result<Vec<ArchitectureId>> {
        let size = self.size();
        if size > cap {
            return Err(Error::EnumerationCap { size, cap });
        }
        let positions = self.positions();
        let mut ids = Vec::with_capacity(size as usize);
        let mut choices = vec![0u16; positions];
        for _ in 0..size {
            ids.push(ArchitectureId(Self::format_choices(self.prefix(), &choices)));
            for p in (0..positions).rev() {
                choices[p] += 1;
                if choices[p] < self.cardinality(p) {
                    break;
                }
                choices[p] = 0;
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Resamples exactly one position to a different value, uniformly over the alternatives.
    pub fn mutate(&self, id: &ArchitectureId, seed: u64) -> Result<ArchitectureId> {
        let mut rng = seeded(seed, stream::MUTATE);
        self.mutate_with(id, &mut rng)
    }

    pub(crate) fn mutate_with<R: Rng>(&self, id: &ArchitectureId, rng: &mut R) -> Result<ArchitectureId> {
        let arch = self.decode(id)?;
        let mutable: Vec<usize> = (0..self.positions())
            .filter(|&p| self.cardinality(p) > 1)
            .collect();
        if mutable.is_empty() {
            return Err(Error::NoMutation(
                "every position has a single option".into(),
            ));
        }
        let mut choices = arch.choices().to_vec();
        let p = mutable[rng.random_range(0..mutable.len())];
        let card = self.cardinality(p);
        // draw from the card-1 alternatives and skip over the current value
        let mut v = rng.random_range(0..card - 1);
        if v >= choices[p] {
            v += 1;
        }
        choices[p] = v;
        Ok(ArchitectureId(Self::format_choices(self.prefix(), &choices)))
    }
}

/// Free-function form of [`SpaceConfig::encode`].
pub fn canonical_encode(space: &SpaceConfig, arch: &Architecture) -> Result<ArchitectureId> {
    space.encode(arch)
}

pub fn sample_prior(space: &SpaceConfig, seed: u64, n: usize) -> Vec<ArchitectureId> {
    space.sample_prior(seed, n)
}

pub fn enumerate_space(space: &SpaceConfig) -> Result<Vec<ArchitectureId>> {
    space.enumerate()
}

pub fn mutate(space: &SpaceConfig, id: &ArchitectureId, seed: u64) -> Result<ArchitectureId> {
    space.mutate(id, seed)
}
