//! Graph edge addition.
//!
//! The KL ball around a node's neighbor distribution only contains
//! distributions on the same support. Edge addition widens that support by
//! mixing a point mass on a similar non-neighbor into the base distribution,
//! `P_new = γ·P_u + (1−γ)·δ_{v*}`, where `v*` minimizes the affinity `g(u,·)`
//! over a random candidate subset of the opposite side of the graph.
//!
//! The overlay is a per-node, one-directional perturbation of the row
//! distributions. It never changes the graph or the degrees used for
//! normalization.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dro::{affinity, worst_case_distribution};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, NodeId, NormalizedAdjacency};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeaConfig {
    pub enabled: bool,
    /// Weight kept on the observed neighbor distribution, in (0, 1].
    pub gamma: f64,
    /// Size of the random candidate subset searched per node.
    pub candidate_size: usize,
    /// Added neighbors per node; the `1−γ` mass is split evenly among them.
    pub added_per_node: usize,
    /// Epochs between re-selection; `None` follows the DRO refresh period.
    pub refresh_period: Option<usize>,
}

impl Default for GeaConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            gamma: 0.8,
            candidate_size: 64,
            added_per_node: 1,
            refresh_period: None,
        }
    }
}

impl GeaConfig {
    pub fn with_gamma(gamma: f64) -> Self {
        Self {
            enabled: true,
            gamma,
            ..Self::default()
        }
    }

    /// Whether an overlay actually perturbs anything.
    pub fn active(&self) -> bool {
        self.enabled && self.gamma < 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "gea.gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.candidate_size == 0 {
            return Err(Error::Config("gea.candidate_size must be at least 1".into()));
        }
        if self.added_per_node == 0 {
            return Err(Error::Config("gea.added_per_node must be at least 1".into()));
        }
        if self.refresh_period == Some(0) {
            return Err(Error::Config("gea.refresh_period must be at least 1".into()));
        }
        Ok(())
    }
}

/// Added neighbors per node plus the mixing weight.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeOverlay {
    gamma: f64,
    added: Vec<Vec<NodeId>>,
}

impl EdgeOverlay {
    /// Overlay that adds nothing.
    pub fn empty(num_nodes: usize) -> Self {
        Self {
            gamma: 1.0,
            added: vec![Vec::new(); num_nodes],
        }
    }

    pub fn from_added(gamma: f64, added: Vec<Vec<NodeId>>) -> Self {
        let mut added = added;
        added.iter_mut().for_each(|a| a.sort_unstable());
        Self { gamma, added }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn added(&self, node: usize) -> &[NodeId] {
        &self.added[node]
    }

    /// First (usually only) added neighbor of `node`.
    pub fn added_neighbor(&self, node: usize) -> Option<NodeId> {
        self.added[node].first().copied()
    }

    pub fn num_nodes(&self) -> usize {
        self.added.len()
    }

    pub fn num_added(&self) -> usize {
        self.added.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma >= 1.0 || self.num_added() == 0
    }
}

/// Opposite-side non-neighbors of `node` with at least one edge.
fn is_candidate(graph: &InteractionGraph, node: usize, v: usize) -> bool {
    graph.degree(v) > 0 && !graph.has_edge(node, v)
}

/// Samples up to `candidate_size` distinct candidates uniformly from the
/// eligible pool, deterministically for a given rng state.
fn sample_candidates<R: Rng>(
    graph: &InteractionGraph,
    node: usize,
    candidate_size: usize,
    rng: &mut R,
) -> Vec<usize> {
    let range = graph.opposite_side(node);
    let upper = range.len().saturating_sub(graph.degree(node));
    if candidate_size.saturating_mul(4) >= upper {
        let pool: Vec<usize> = range.filter(|&v| is_candidate(graph, node, v)).collect();
        if pool.len() <= candidate_size {
            return pool;
        }
        return index::sample(rng, pool.len(), candidate_size)
            .into_iter()
            .map(|k| pool[k])
            .collect();
    }

    // Sparse pool membership: rejection sampling, with an exhaustive fallback
    // if the pool turns out to be mostly ineligible nodes.
    let mut picked = Vec::with_capacity(candidate_size);
    let mut attempts = 0usize;
    let cap = 64 * candidate_size;
    while picked.len() < candidate_size && attempts < cap {
        attempts += 1;
        let v = rng.gen_range(range.clone());
        if is_candidate(graph, node, v) && !picked.contains(&v) {
            picked.push(v);
        }
    }
    if picked.len() < candidate_size {
        let pool: Vec<usize> = range
            .filter(|&v| is_candidate(graph, node, v) && !picked.contains(&v))
            .collect();
        let need = (candidate_size - picked.len()).min(pool.len());
        picked.extend(index::sample(rng, pool.len(), need).into_iter().map(|k| pool[k]));
    }
    picked
}

/// Lowest-affinity candidates for `node`, ties broken by lower node id.
/// `embeddings` must already be normalized the way affinities expect.
fn select_from_prepared(
    graph: &InteractionGraph,
    prepared: &EmbeddingTable,
    node: usize,
    candidate_size: usize,
    count: usize,
    seed: u64,
) -> Vec<NodeId> {
    if graph.degree(node) == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let du = graph.degree(node) as f64;
    let mut scored: Vec<(f64, usize)> = sample_candidates(graph, node, candidate_size, &mut rng)
        .into_iter()
        .map(|v| {
            let g = affinity(prepared.row(node), prepared.row(v), du, graph.degree(v) as f64);
            (g, v)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(count);
    scored.into_iter().map(|(_, v)| NodeId::from(v)).collect()
}

fn prepare(embeddings: &EmbeddingTable, l2_normalize: bool) -> std::borrow::Cow<'_, EmbeddingTable> {
    if l2_normalize {
        std::borrow::Cow::Owned(embeddings.l2_normalized())
    } else {
        std::borrow::Cow::Borrowed(embeddings)
    }
}

/// Picks the candidate minimizing `g(node, ·)` from a random subset of
/// opposite-side non-neighbors. `None` when the node has no neighbors or no
/// eligible non-neighbor exists.
pub fn select_added_neighbor(
    graph: &InteractionGraph,
    embeddings: &EmbeddingTable,
    node: usize,
    candidate_size: usize,
    l2_normalize: bool,
    seed: u64,
) -> Result<Option<NodeId>> {
    if embeddings.rows() != graph.num_nodes() {
        return Err(Error::Shape(format!(
            "{} embedding rows for {} nodes",
            embeddings.rows(),
            graph.num_nodes()
        )));
    }
    if node >= graph.num_nodes() {
        return Err(Error::InvalidArgument(format!("node {node} out of range")));
    }
    let prepared = prepare(embeddings, l2_normalize);
    Ok(select_from_prepared(graph, &prepared, node, candidate_size, 1, seed)
        .first()
        .copied())
}

/// Per-node seed derived from a refresh seed (splitmix64 finalizer).
pub(crate) fn node_seed(seed: u64, node: usize) -> u64 {
    let mut z = seed ^ (node as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Selects added neighbors for every node (users and items alike).
pub fn select_overlay(
    graph: &InteractionGraph,
    embeddings: &EmbeddingTable,
    config: &GeaConfig,
    l2_normalize: bool,
    seed: u64,
) -> Result<EdgeOverlay> {
    config.validate()?;
    if embeddings.rows() != graph.num_nodes() {
        return Err(Error::Shape(format!(
            "{} embedding rows for {} nodes",
            embeddings.rows(),
            graph.num_nodes()
        )));
    }
    if !config.active() {
        return Ok(EdgeOverlay::empty(graph.num_nodes()));
    }
    let prepared = prepare(embeddings, l2_normalize);
    let added = (0..graph.num_nodes())
        .map(|u| {
            select_from_prepared(
                graph,
                &prepared,
                u,
                config.candidate_size,
                config.added_per_node,
                node_seed(seed, u),
            )
        })
        .collect();
    Ok(EdgeOverlay::from_added(config.gamma, added))
}

/// Realizes the mixed distributions in the adjacency rows: existing entries
/// of an overlaid row are scaled by `γ`, and each added neighbor `v` gets the
/// entry `√d_u · m_v / √d_v` for its mass `m_v`, so that the row encodes
/// `γ·P_u + (1−γ)·P_add` (see [`NormalizedAdjacency::row_distribution`]).
pub fn apply_overlay(adj: &NormalizedAdjacency, overlay: &EdgeOverlay) -> Result<NormalizedAdjacency> {
    if overlay.num_nodes() != adj.num_nodes() {
        return Err(Error::Shape(format!(
            "overlay over {} nodes for adjacency over {}",
            overlay.num_nodes(),
            adj.num_nodes()
        )));
    }
    if overlay.is_empty() {
        return Ok(adj.clone());
    }
    let gamma = overlay.gamma();
    let degrees = adj.degrees();
    let mut row_offsets = Vec::with_capacity(adj.num_nodes() + 1);
    let mut cols = Vec::with_capacity(adj.nnz() + overlay.num_added());
    let mut values = Vec::with_capacity(adj.nnz() + overlay.num_added());
    row_offsets.push(0);
    for u in 0..adj.num_nodes() {
        let (rc, rv) = adj.row(u);
        let added = overlay.added(u);
        if added.is_empty() {
            cols.extend_from_slice(rc);
            values.extend_from_slice(rv);
        } else {
            if rc.is_empty() || degrees[u] == 0 {
                return Err(Error::InvalidArgument(format!(
                    "overlay adds neighbors to isolated node {u}"
                )));
            }
            let mass = (1.0 - gamma) / added.len() as f64;
            let su = (degrees[u] as f64).sqrt();
            let mut extra: Vec<(u32, f64)> = Vec::with_capacity(added.len());
            for &v in added {
                if rc.binary_search(&v.0).is_ok() {
                    return Err(Error::OverlayConflict {
                        node: u,
                        neighbor: v.index(),
                    });
                }
                let dv = degrees[v.index()];
                if dv == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "overlay adds isolated node {v} to node {u}"
                    )));
                }
                extra.push((v.0, mass * su / (dv as f64).sqrt()));
            }
            // Merge two sorted lists.
            let mut existing = rc.iter().zip(rv).map(|(&c, &v)| (c, gamma * v)).peekable();
            let mut extra = extra.into_iter().peekable();
            loop {
                let take_existing = match (existing.peek(), extra.peek()) {
                    (Some(a), Some(b)) => a.0 < b.0,
                    (Some(_), None) => true,
                    (None, Some(_)) => false,
                    (None, None) => break,
                };
                let (c, v) = if take_existing {
                    existing.next().unwrap()
                } else {
                    extra.next().unwrap()
                };
                cols.push(c);
                values.push(v);
            }
        }
        row_offsets.push(cols.len());
    }
    Ok(NormalizedAdjacency::from_parts(
        row_offsets,
        cols,
        values,
        degrees.to_vec(),
        false,
    ))
}

/// `γ·base` on the observed support followed by `(1−γ)/m` on each of the
/// `m` added neighbors.
pub fn mixed_distribution(base: &[f64], added: usize, gamma: f64) -> Vec<f64> {
    if added == 0 || gamma >= 1.0 {
        return base.to_vec();
    }
    let mass = (1.0 - gamma) / added as f64;
    base.iter()
        .map(|p| gamma * p)
        .chain(std::iter::repeat_n(mass, added))
        .collect()
}

/// Worst-case distribution over the mixed base. `affinities` holds `g` for
/// the observed support followed by `added_affinities` for added neighbors.
pub fn dro_over_new_distribution(
    base: &[f64],
    affinities: &[f64],
    added_affinities: &[f64],
    gamma: f64,
    alpha: f64,
) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if added_affinities.is_empty() || gamma >= 1.0 {
        return worst_case_distribution(base, affinities, alpha);
    }
    let mixed = mixed_distribution(base, added_affinities.len(), gamma);
    let g: Vec<f64> = affinities.iter().chain(added_affinities).copied().collect();
    worst_case_distribution(&mixed, &g, alpha)
}
