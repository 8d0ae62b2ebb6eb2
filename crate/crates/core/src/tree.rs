//! Breadth-first growth of branching random walk genealogies and the
//! additive martingale `W_n(α)` in log scale.

use std::ops::Range;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::law::LawSpec;
use crate::numerics::{log_sum_exp, serialize_extended, serialize_extended_vec};

pub const DEFAULT_MAX_NODES: usize = 1_000_000;
pub const DEFAULT_MAX_DEPTH: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GrowthCaps {
    pub max_nodes: usize,
    pub max_depth: usize,
}

impl Default for GrowthCaps {
    fn default() -> Self {
        Self {
            max_nodes: DEFAULT_MAX_NODES,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

impl GrowthCaps {
    pub fn with_max_nodes(max_nodes: usize) -> Self {
        Self {
            max_nodes,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub parent: Option<usize>,
    /// `None` for the root.
    pub displacement: Option<f64>,
    pub position: f64,
    pub generation: usize,
    /// Indices of the children, which are contiguous in the arena.
    pub children: Range<usize>,
}

/// Arena of nodes in breadth-first order. Generation `n` occupies a
/// contiguous block of indices and children keep their birth order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledTree {
    nodes: Vec<NodeRecord>,
    generation_index: Vec<Range<usize>>,
    extinct_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrowthError {
    #[error("population cap of {max_nodes} nodes reached after {generation_reached} complete generations")]
    PopulationCap {
        max_nodes: usize,
        generation_reached: usize,
        /// The tree truncated to its complete generations.
        partial: Box<LabelledTree>,
    },
    #[error("requested depth {depth} exceeds the depth cap {max_depth}")]
    DepthExceedsCap { depth: usize, max_depth: usize },
}

impl LabelledTree {
    /// A tree consisting of the root at the origin.
    pub fn root() -> Self {
        Self {
            nodes: vec![NodeRecord {
                parent: None,
                displacement: None,
                position: 0.0,
                generation: 0,
                children: 0..0,
            }],
            generation_index: std::iter::once(0..1).collect(),
            extinct_at: None,
        }
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node(&self, index: usize) -> &NodeRecord {
        &self.nodes[index]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of complete generations beyond the root.
    pub fn depth_grown(&self) -> usize {
        self.generation_index.len() - 1
    }

    /// First generation with no particles, if any.
    pub fn extinct_at(&self) -> Option<usize> {
        self.extinct_at
    }

    /// Node indices with `|σ| = n`.
    pub fn generation(&self, n: usize) -> Range<usize> {
        self.generation_index[n].clone()
    }

    pub fn positions(&self, n: usize) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.nodes[self.generation(n)].iter().map(|r| r.position)
    }

    /// `Z_n` for `n = 0..=depth_grown`.
    pub fn generation_sizes(&self) -> Vec<usize> {
        self.generation_index.iter().map(|r| r.len()).collect()
    }

    /// Appends generation `n + 1`; `children_of(node)` supplies the displacements
    /// of each node of generation `n` in index order. Fails without modifying
    /// the tree if the new generation would exceed `max_nodes`.
    pub(crate) fn extend_generation<F>(
        &mut self,
        max_nodes: usize,
        mut children_of: F,
    ) -> Result<(), ()>
    where
        F: FnMut(usize, &mut Vec<f64>),
    {
        let current = self
            .generation_index
            .last()
            .expect("root generation")
            .clone();
        let start = self.nodes.len();
        let mut scratch = Vec::new();
        for parent in current.clone() {
            scratch.clear();
            children_of(parent, &mut scratch);
            if self.nodes.len() + scratch.len() > max_nodes {
                self.nodes.truncate(start);
                for p in current {
                    self.nodes[p].children = start..start;
                }
                return Err(());
            }
            let first = self.nodes.len();
            let base = self.nodes[parent].position;
            let generation = self.nodes[parent].generation + 1;
            self.nodes.extend(scratch.iter().map(|&x| NodeRecord {
                parent: Some(parent),
                displacement: Some(x),
                position: base + x,
                generation,
                children: 0..0,
            }));
            self.nodes[parent].children = first..self.nodes.len();
        }
        let end = self.nodes.len();
        if end == start && self.extinct_at.is_none() {
            self.extinct_at = Some(self.generation_index.len());
        }
        self.generation_index.push(start..end);
        Ok(())
    }

    /// Displacements along the path from the root to `node`, root first.
    pub fn path_displacements(&self, node: usize) -> Vec<f64> {
        let mut out = Vec::new();
        let mut cur = node;
        while let Some(p) = self.nodes[cur].parent {
            out.push(self.nodes[cur].displacement.expect("non-root node"));
            cur = p;
        }
        out.reverse();
        out
    }
}

/// Grows a tree to `depth` generations: every particle in generations
/// `0..depth` reproduces independently according to `law`.
pub fn grow_tree<R: Rng + ?Sized>(
    law: &LawSpec,
    depth: usize,
    caps: GrowthCaps,
    rng: &mut R,
) -> Result<LabelledTree, GrowthError> {
    if depth > caps.max_depth {
        return Err(GrowthError::DepthExceedsCap {
            depth,
            max_depth: caps.max_depth,
        });
    }
    let mut tree = LabelledTree::root();
    for generation in 0..depth {
        if tree
            .extend_generation(caps.max_nodes, |_, out| law.sample_into(rng, out))
            .is_err()
        {
            return Err(GrowthError::PopulationCap {
                max_nodes: caps.max_nodes,
                generation_reached: generation,
                partial: Box::new(tree),
            });
        }
    }
    Ok(tree)
}

/// Log-scale trajectory `log W_0, log W_1, …` with `-inf` for empty generations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WTrajectory {
    pub alpha: f64,
    #[serde(serialize_with = "serialize_extended")]
    pub log_m: f64,
    #[serde(serialize_with = "serialize_extended_vec")]
    pub log_w: Vec<f64>,
    pub population: Vec<usize>,
}

impl WTrajectory {
    pub fn w(&self, n: usize) -> f64 {
        self.log_w[n].exp()
    }
}

/// `log W_n = logsumexp_{|σ|=n}(-α S(σ)) - n log m(α)` for every grown generation.
pub fn w_trajectory(tree: &LabelledTree, alpha: f64, log_m: f64) -> WTrajectory {
    let mut scratch = Vec::new();
    let log_w = (0..=tree.depth_grown())
        .map(|n| {
            scratch.clear();
            scratch.extend(tree.positions(n).map(|s| -alpha * s));
            if scratch.is_empty() {
                f64::NEG_INFINITY
            } else {
                // Guard n = 0: `0 * log m` is NaN when m(α) = 0.
                log_sum_exp(&scratch) - if n == 0 { 0.0 } else { n as f64 * log_m }
            }
        })
        .collect();
    WTrajectory {
        alpha,
        log_m,
        log_w,
        population: tree.generation_sizes(),
    }
}

/// `Z_n` for each grown generation.
pub fn generation_sizes(tree: &LabelledTree) -> Vec<usize> {
    tree.generation_sizes()
}
