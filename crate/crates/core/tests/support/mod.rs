//! Helpers shared by the integration tests.

#![allow(dead_code)]

pub mod fixed;

use drgnn::{EmbeddingTable, InteractionGraph};
use rand::Rng;

/// Random bipartite graph with at most `max_nodes` nodes; every user gets at
/// least one item when `connected_users` is set.
pub fn random_graph<R: Rng>(rng: &mut R, max_nodes: usize, connected_users: bool) -> InteractionGraph {
    let users = rng.gen_range(1..max_nodes / 2);
    let items = rng.gen_range(1..=(max_nodes - users));
    let density: f64 = rng.gen_range(0.05..0.6);
    let mut pairs = Vec::new();
    for u in 0..users {
        for i in 0..items {
            if rng.gen_bool(density) {
                pairs.push((u, i));
            }
        }
        if connected_users && !pairs.iter().any(|&(pu, _)| pu == u) {
            pairs.push((u, rng.gen_range(0..items)));
        }
    }
    InteractionGraph::build(&pairs, users, items).unwrap()
}

pub fn random_embeddings<R: Rng>(rng: &mut R, rows: usize, dim: usize) -> EmbeddingTable {
    let data = (0..rows * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    EmbeddingTable::from_vec(rows, dim, data).unwrap()
}
