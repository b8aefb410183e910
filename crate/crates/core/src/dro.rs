//! KL-robust neighbor aggregation.
//!
//! LightGCN aggregation is one gradient step (step size 1/2) on the graph
//! smoothness regularizer
//!
//! ```text
//! L_smooth = 1/2 Σ_u Σ_{v∈N(u)} ‖E_u/√d_u − E_v/√d_v‖² = tr(Eᵀ L E),   L = I − Ã
//! ```
//!
//! Writing the per-node term as an expectation over the neighbor distribution
//! `P_u` and maximizing it over a KL ball around `P_u` gives an exponential
//! tilt of `P_u` by the affinity `g(u,v) = −E_uᵀE_v / (√d_u √d_v)`:
//!
//! ```text
//! P*_u(v) = P_u(v) · exp(g(u,v)/α) / E_{w∼P_u}[exp(g(u,w)/α)]
//! ```
//!
//! where `α` is the Lagrange multiplier of the KL constraint. Replacing `P_u`
//! by `P*_u` inside aggregation amounts to rescaling the entries of row `u`
//! of `Ã` by the likelihood ratio `P*_u(v)/P_u(v)`.

use serde::{Deserialize, Serialize};

use crate::embedding::{dot, EmbeddingTable};
use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, NormalizedAdjacency};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DroConfig {
    /// Lagrange multiplier standing in for the KL radius. Infinity disables
    /// reweighting (plain LightGCN aggregation).
    #[serde(with = "crate::config::extended_f64")]
    pub alpha: f64,
    /// Epochs between recomputations of the reweighted adjacency.
    pub refresh_period: usize,
    /// Normalize embeddings to unit L2 norm before computing affinities.
    pub l2_normalize: bool,
}

impl Default for DroConfig {
    fn default() -> Self {
        Self {
            alpha: f64::INFINITY,
            refresh_period: 1,
            l2_normalize: true,
        }
    }
}

impl DroConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn enabled(&self) -> bool {
        self.alpha.is_finite()
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.refresh_period == 0 {
            return Err(Error::Config("dro.refresh_period must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    // NaN fails the comparison too.
    if alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// `g(u,v) = −e_uᵀe_v / (√d_u √d_v)`.
#[inline]
pub fn affinity(eu: &[f64], ev: &[f64], du: f64, dv: f64) -> f64 {
    -dot(eu, ev) / (du.sqrt() * dv.sqrt())
}

/// Affinities for every stored entry of an adjacency, aligned with its
/// column array.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborAffinity {
    values: Vec<f64>,
}

impl NeighborAffinity {
    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row<'a>(&'a self, adj: &NormalizedAdjacency, node: usize) -> &'a [f64] {
        let offsets = adj.row_offsets();
        &self.values[offsets[node]..offsets[node + 1]]
    }
}

/// Computes `g` for every entry of `adj` from `embeddings`, using the
/// original degrees the adjacency carries.
pub fn neighbor_affinities(
    adj: &NormalizedAdjacency,
    embeddings: &EmbeddingTable,
    l2_normalize: bool,
) -> Result<NeighborAffinity> {
    check_rows(adj, embeddings)?;
    let normalized;
    let emb = if l2_normalize {
        normalized = embeddings.l2_normalized();
        &normalized
    } else {
        embeddings
    };
    Ok(affinities_prepared(adj, emb))
}

fn affinities_prepared(adj: &NormalizedAdjacency, emb: &EmbeddingTable) -> NeighborAffinity {
    let degrees = adj.degrees();
    let mut values = Vec::with_capacity(adj.nnz());
    for u in 0..adj.num_nodes() {
        let du = degrees[u] as f64;
        for &v in adj.row(u).0 {
            let v = v as usize;
            values.push(affinity(emb.row(u), emb.row(v), du, degrees[v] as f64));
        }
    }
    NeighborAffinity { values }
}

fn check_rows(adj: &NormalizedAdjacency, embeddings: &EmbeddingTable) -> Result<()> {
    if adj.num_nodes() != embeddings.rows() {
        return Err(Error::Shape(format!(
            "{} embedding rows for {} nodes",
            embeddings.rows(),
            adj.num_nodes()
        )));
    }
    Ok(())
}

fn check_distribution(base: &[f64], g: &[f64]) -> Result<()> {
    if base.len() != g.len() {
        return Err(Error::Shape(format!(
            "{} probabilities vs {} affinities",
            base.len(),
            g.len()
        )));
    }
    if base.is_empty() {
        return Err(Error::InvalidArgument("empty support".into()));
    }
    Ok(())
}

/// `ln Σ_v base(v)·exp(g(v)/α)` evaluated with the maximum exponent
/// subtracted, returned together with the shifted log-weights.
fn log_partition(base: &[f64], g: &[f64], alpha: f64) -> (f64, Vec<f64>) {
    let logw: Vec<f64> = base
        .iter()
        .zip(g)
        .map(|(&p, &gv)| p.ln() + gv / alpha)
        .collect();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logw.iter().map(|&l| (l - max).exp()).sum();
    (max + sum.ln(), logw)
}

/// Worst-case distribution inside the KL ball: the exponential tilt of
/// `base` by `g/α`. Support is preserved.
pub fn worst_case_distribution(base: &[f64], g: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    check_distribution(base, g)?;
    let (log_z, logw) = log_partition(base, g, alpha);
    Ok(logw.iter().map(|&l| (l - log_z).exp()).collect())
}

/// Robust smoothness term `α·ln E_{v∼base}[exp(g(v)/α)]` (the constant `αη`
/// is dropped). Non-decreasing in each `g(v)` and never below `E_base[g]`.
pub fn dro_smooth_loss(base: &[f64], g: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if base.is_empty() {
        return Err(Error::EmptyNeighborhood(0));
    }
    check_distribution(base, g)?;
    Ok(alpha * log_partition(base, g, alpha).0)
}

/// `KL(p ‖ q) = Σ p ln(p/q)`, with `0·ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum()
}

/// Pairwise form of the smoothness regularizer,
/// `1/2 Σ_u Σ_{v∈N(u)} ‖E_u/√d_u − E_v/√d_v‖²`.
pub fn smoothness(graph: &InteractionGraph, embeddings: &EmbeddingTable) -> Result<f64> {
    if graph.num_nodes() != embeddings.rows() {
        return Err(Error::Shape(format!(
            "{} embedding rows for {} nodes",
            embeddings.rows(),
            graph.num_nodes()
        )));
    }
    let mut total = 0.0;
    for u in 0..graph.num_nodes() {
        let su = (graph.degree(u) as f64).sqrt();
        for &v in graph.neighbors(u) {
            let v = v as usize;
            let sv = (graph.degree(v) as f64).sqrt();
            total += embeddings
                .row(u)
                .iter()
                .zip(embeddings.row(v))
                .map(|(a, b)| {
                    let d = a / su - b / sv;
                    d * d
                })
                .sum::<f64>();
        }
    }
    Ok(0.5 * total)
}

/// Trace form `tr(Eᵀ (I − Ã) E)`, restricted to nodes with at least one
/// neighbor (isolated nodes contribute nothing to the pairwise sum).
pub fn laplacian_quadratic(adj: &NormalizedAdjacency, embeddings: &EmbeddingTable) -> Result<f64> {
    check_rows(adj, embeddings)?;
    let ae = adj.apply(embeddings)?;
    Ok((0..adj.num_nodes())
        .filter(|&v| adj.degrees()[v] > 0)
        .map(|v| {
            let e = embeddings.row(v);
            dot(e, e) - dot(e, ae.row(v))
        })
        .sum())
}

/// Gradient of [`smoothness`] accumulated edge by edge from the adjacency
/// structure and degrees; the stored edge values are not used.
pub fn smoothness_gradient(
    adj: &NormalizedAdjacency,
    embeddings: &EmbeddingTable,
) -> Result<EmbeddingTable> {
    check_rows(adj, embeddings)?;
    let degrees = adj.degrees();
    let mut grad = EmbeddingTable::zeros(embeddings.rows(), embeddings.dim());
    for u in 0..adj.num_nodes() {
        let su = (degrees[u] as f64).sqrt();
        for &v in adj.row(u).0 {
            let v = v as usize;
            let sv = (degrees[v] as f64).sqrt();
            // Both ordered pairs (u,v) and (v,u) contribute diff/√d_u.
            let (eu, ev) = (embeddings.row(u), embeddings.row(v));
            let diff: Vec<f64> = eu.iter().zip(ev).map(|(a, b)| a / su - b / sv).collect();
            for (gu, d) in grad.row_mut(u).iter_mut().zip(&diff) {
                *gu += 2.0 * d / su;
            }
        }
    }
    Ok(grad)
}

/// Max-norm residual of `E − ½∇L_smooth(E) − ÃE` over non-isolated nodes.
/// Zero up to rounding: one gradient step of size ½ is one aggregation.
pub fn aggregation_equivalence_check(
    adj: &NormalizedAdjacency,
    embeddings: &EmbeddingTable,
) -> Result<f64> {
    let grad = smoothness_gradient(adj, embeddings)?;
    let ae = adj.apply(embeddings)?;
    let mut residual = 0.0f64;
    for v in (0..adj.num_nodes()).filter(|&v| adj.degrees()[v] > 0) {
        for ((e, g), a) in embeddings.row(v).iter().zip(grad.row(v)).zip(ae.row(v)) {
            residual = residual.max((e - 0.5 * g - a).abs());
        }
    }
    Ok(residual)
}

/// Reweighted adjacency from embeddings: every row is rescaled so that it
/// realizes the worst-case neighbor distribution of that node.
pub fn reweight_adjacency(
    adj: &NormalizedAdjacency,
    embeddings: &EmbeddingTable,
    alpha: f64,
    l2_normalize: bool,
) -> Result<NormalizedAdjacency> {
    check_alpha(alpha)?;
    if alpha.is_infinite() {
        return Ok(adj.clone());
    }
    let g = neighbor_affinities(adj, embeddings, l2_normalize)?;
    reweight_with_affinities(adj, &g, alpha)
}

/// Row `u` of the result is row `u` of `adj` scaled entrywise by the
/// likelihood ratio `P*_u(v)/P_u(v) = exp(g/α) / E_{P_u}[exp(g/α)]`, where
/// `P_u` is the distribution the row already encodes. On a plain normalized
/// row this is `d_u · softmax_α(g(u,·))`.
pub fn reweight_with_affinities(
    adj: &NormalizedAdjacency,
    affinities: &NeighborAffinity,
    alpha: f64,
) -> Result<NormalizedAdjacency> {
    check_alpha(alpha)?;
    if affinities.values().len() != adj.nnz() {
        return Err(Error::Shape(format!(
            "{} affinities for {} adjacency entries",
            affinities.values().len(),
            adj.nnz()
        )));
    }
    if alpha.is_infinite() {
        return Ok(adj.clone());
    }
    let mut values = Vec::with_capacity(adj.nnz());
    for u in 0..adj.num_nodes() {
        let (_, row) = adj.row(u);
        if row.is_empty() {
            continue;
        }
        let base = adj.row_distribution(u);
        let g = affinities.row(adj, u);
        let (log_z, _) = log_partition(&base, g, alpha);
        values.extend(
            row.iter()
                .zip(g)
                .map(|(&a, &gv)| a * (gv / alpha - log_z).exp()),
        );
    }
    Ok(NormalizedAdjacency::from_parts(
        adj.row_offsets().to_vec(),
        adj.cols().to_vec(),
        values,
        adj.degrees().to_vec(),
        false,
    ))
}

/// Mean of `KL(P*_u ‖ P_u)` over non-isolated nodes, the effective robust
/// radius implied by `α` at the given embeddings.
pub fn mean_worst_case_kl(
    adj: &NormalizedAdjacency,
    embeddings: &EmbeddingTable,
    alpha: f64,
    l2_normalize: bool,
) -> Result<f64> {
    check_alpha(alpha)?;
    if alpha.is_infinite() {
        return Ok(0.0);
    }
    let g = neighbor_affinities(adj, embeddings, l2_normalize)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for u in 0..adj.num_nodes() {
        if adj.row(u).0.is_empty() {
            continue;
        }
        let base = adj.row_distribution(u);
        let tilted = worst_case_distribution(&base, g.row(adj, u), alpha)?;
        total += kl_divergence(&tilted, &base);
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Inputs of the per-node generalization bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub alpha: f64,
    pub degree: f64,
    /// Failure probability, in (0, 1).
    pub rho: f64,
    /// Size of the finite hypothesis space, at least 1.
    pub hypothesis_count: f64,
}

/// `B(α,d,ρ) = (d+√d)·e^{2√d/α} / (d−1+e^{2√d/α}) · √(½ ln(|Θ|/ρ))`.
///
/// The prefactor is evaluated as `(d+√d) / ((d−1)·e^{−2√d/α} + 1)` so large
/// exponents cannot overflow.
pub fn generalization_bound(inputs: &BoundInputs) -> Result<f64> {
    let BoundInputs {
        alpha,
        degree,
        rho,
        hypothesis_count,
    } = *inputs;
    check_alpha(alpha)?;
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!("rho must lie in (0, 1), got {rho}")));
    }
    if !(degree >= 1.0) || !degree.is_finite() {
        return Err(Error::InvalidArgument(format!("degree must be at least 1, got {degree}")));
    }
    if !(hypothesis_count >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "hypothesis count must be at least 1, got {hypothesis_count}"
        )));
    }
    let root = degree.sqrt();
    let decay = (-2.0 * root / alpha).exp();
    let prefactor = (degree + root) / ((degree - 1.0) * decay + 1.0);
    let log_term = (hypothesis_count.ln() - rho.ln()).max(0.0);
    Ok(prefactor * (0.5 * log_term).sqrt())
}
