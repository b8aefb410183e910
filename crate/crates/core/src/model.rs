//! Linear K-layer propagation `E^(k) = Ã E^(k−1)`, layer combination, and
//! dot-product scoring, with the matching reverse pass.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{dot, EmbeddingTable};
use crate::error::{Error, Result};
use crate::graph::{NodeId, NormalizedAdjacency};

/// How per-layer embeddings are combined into the final representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerCombine {
    /// Uniform mean over layers `0..=K`.
    #[default]
    Mean,
    /// Output of layer `K` only.
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub combine: LayerCombine,
    /// Standard deviation of the normal initializer.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            layers: 3,
            combine: LayerCombine::Mean,
            init_std: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("model.dim must be at least 1".into()));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("model.init_std must be positive".into()));
        }
        Ok(())
    }
}

/// An immutable propagation matrix together with its transpose, which the
/// reverse pass needs whenever the matrix is not symmetric.
#[derive(Debug, Clone)]
pub struct AdjacencySnapshot {
    forward: Arc<NormalizedAdjacency>,
    backward: Option<Arc<NormalizedAdjacency>>,
}

impl AdjacencySnapshot {
    pub fn new(adj: NormalizedAdjacency) -> Self {
        let backward = (!adj.is_symmetric()).then(|| Arc::new(adj.transpose()));
        Self {
            forward: Arc::new(adj),
            backward,
        }
    }

    pub fn adjacency(&self) -> &NormalizedAdjacency {
        &self.forward
    }

    pub fn transpose(&self) -> &NormalizedAdjacency {
        self.backward.as_deref().unwrap_or(&self.forward)
    }

    pub fn id(&self) -> u64 {
        self.forward.snapshot()
    }
}

impl From<NormalizedAdjacency> for AdjacencySnapshot {
    fn from(adj: NormalizedAdjacency) -> Self {
        Self::new(adj)
    }
}

#[derive(Debug, Clone)]
pub struct PropagationOutput {
    /// `E^(0) ..= E^(K)`.
    pub layers: Vec<EmbeddingTable>,
    pub combined: EmbeddingTable,
    pub combine: LayerCombine,
    pub snapshot: u64,
}

impl PropagationOutput {
    pub fn num_layers(&self) -> usize {
        self.layers.len() - 1
    }
}

fn combine_weight(combine: LayerCombine, layer: usize, layers: usize) -> f64 {
    match combine {
        LayerCombine::Mean => 1.0 / (layers + 1) as f64,
        LayerCombine::Last if layer == layers => 1.0,
        LayerCombine::Last => 0.0,
    }
}

pub fn propagate(
    snapshot: &AdjacencySnapshot,
    embeddings: &EmbeddingTable,
    layers: usize,
    combine: LayerCombine,
) -> Result<PropagationOutput> {
    let adj = snapshot.adjacency();
    if embeddings.rows() != adj.num_nodes() {
        return Err(Error::Shape(format!(
            "{} embedding rows for {} nodes",
            embeddings.rows(),
            adj.num_nodes()
        )));
    }
    let mut all = Vec::with_capacity(layers + 1);
    all.push(embeddings.clone());
    for k in 1..=layers {
        let next = adj.apply(&all[k - 1])?;
        all.push(next);
    }
    let combined = match combine {
        LayerCombine::Last => all[layers].clone(),
        LayerCombine::Mean => {
            let mut acc = all[0].clone();
            for layer in &all[1..] {
                acc.add_scaled(1.0, layer);
            }
            acc.scale(combine_weight(combine, 0, layers));
            acc
        }
    };
    Ok(PropagationOutput {
        layers: all,
        combined,
        combine,
        snapshot: snapshot.id(),
    })
}

/// Gradient with respect to `E^(0)` of a loss whose gradient with respect to
/// the combined embeddings is `upstream`:
/// `Σ_k w_k (Ãᵀ)^k · upstream` with `w_k` the layer combination weights.
pub fn backpropagate(
    snapshot: &AdjacencySnapshot,
    forward: &PropagationOutput,
    upstream: &EmbeddingTable,
) -> Result<EmbeddingTable> {
    if forward.snapshot != snapshot.id() {
        return Err(Error::SnapshotMismatch {
            expected: forward.snapshot,
            found: snapshot.id(),
        });
    }
    if !upstream.same_shape(&forward.combined) {
        return Err(Error::Shape(format!(
            "upstream gradient {}x{} vs embeddings {}x{}",
            upstream.rows(),
            upstream.dim(),
            forward.combined.rows(),
            forward.combined.dim()
        )));
    }
    let layers = forward.num_layers();
    let transpose = snapshot.transpose();
    // Horner form: acc = w_0 G + Ãᵀ(w_1 G + Ãᵀ(w_2 G + ...)).
    let mut acc = upstream.clone();
    acc.scale(combine_weight(forward.combine, layers, layers));
    let mut scratch = EmbeddingTable::zeros(upstream.rows(), upstream.dim());
    for k in (0..layers).rev() {
        transpose.apply_into(&acc, &mut scratch)?;
        std::mem::swap(&mut acc, &mut scratch);
        let w = combine_weight(forward.combine, k, layers);
        if w != 0.0 {
            acc.add_scaled(w, upstream);
        }
    }
    Ok(acc)
}

/// Dot product of the final user and item rows.
pub fn score(final_embeddings: &EmbeddingTable, user: NodeId, item: NodeId) -> Result<f64> {
    let n = final_embeddings.rows();
    if user.index() >= n || item.index() >= n {
        return Err(Error::InvalidArgument(format!(
            "node ({user}, {item}) out of range for {n} rows"
        )));
    }
    Ok(dot(
        final_embeddings.row(user.index()),
        final_embeddings.row(item.index()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::InteractionGraph;

    fn small() -> (InteractionGraph, AdjacencySnapshot) {
        let g = InteractionGraph::build(&[(0, 0), (0, 1), (1, 1), (2, 0), (2, 2)], 3, 3).unwrap();
        let s = AdjacencySnapshot::new(g.normalize());
        (g, s)
    }

    #[test]
    fn zero_layers_is_identity() {
        let (_, s) = small();
        let e = EmbeddingTable::random_normal(6, 3, 1.0, 2);
        let out = propagate(&s, &e, 0, LayerCombine::Mean).unwrap();
        assert_eq!(out.combined, e);
        let g = EmbeddingTable::random_normal(6, 3, 1.0, 3);
        assert_eq!(backpropagate(&s, &out, &g).unwrap(), g);
    }

    #[test]
    fn single_edge_swaps_embeddings() {
        let g = InteractionGraph::build(&[(0, 0)], 1, 1).unwrap();
        let s = AdjacencySnapshot::new(g.normalize());
        let e = EmbeddingTable::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap();
        let out = propagate(&s, &e, 1, LayerCombine::Mean).unwrap();
        assert_eq!(out.layers[1].row(0), e.row(1));
        assert_eq!(out.layers[1].row(1), e.row(0));
        assert_eq!(out.combined.row(0), &[2.0, 0.5]);
    }

    #[test]
    fn symmetric_backprop_equals_forward() {
        let (_, s) = small();
        let grad = EmbeddingTable::random_normal(6, 2, 1.0, 5);
        let e = EmbeddingTable::random_normal(6, 2, 1.0, 6);
        let out = propagate(&s, &e, 3, LayerCombine::Mean).unwrap();
        let back = backpropagate(&s, &out, &grad).unwrap();
        let fwd = propagate(&s, &grad, 3, LayerCombine::Mean).unwrap().combined;
        assert!(back.max_abs_diff(&fwd) < 1e-14);
    }

    #[test]
    fn snapshot_mismatch_detected() {
        let (g, s) = small();
        let other = AdjacencySnapshot::new(g.normalize());
        let e = EmbeddingTable::random_normal(6, 2, 1.0, 6);
        let out = propagate(&s, &e, 2, LayerCombine::Mean).unwrap();
        assert!(matches!(
            backpropagate(&other, &out, &e),
            Err(Error::SnapshotMismatch { .. })
        ));
    }

    #[test]
    fn last_layer_combine() {
        let (_, s) = small();
        let e = EmbeddingTable::random_normal(6, 2, 1.0, 1);
        let out = propagate(&s, &e, 2, LayerCombine::Last).unwrap();
        assert_eq!(out.combined, out.layers[2]);
    }

    #[test]
    fn scores() {
        let e = EmbeddingTable::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.0, 1.0]])
            .unwrap();
        assert_eq!(score(&e, NodeId(0), NodeId(1)).unwrap(), 1.0);
        let u = EmbeddingTable::from_rows(&[vec![0.6, 0.8], vec![0.6, 0.8], vec![-0.8, 0.6]])
            .unwrap();
        assert!((score(&u, NodeId(0), NodeId(1)).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(score(&u, NodeId(0), NodeId(2)).unwrap(), 0.0);
        assert!(score(&u, NodeId(0), NodeId(3)).is_err());
    }
}
