//! Graph collaborative filtering with distributionally robust neighbor
//! aggregation.
//!
//! LightGCN-style propagation over a bipartite user–item graph, where each
//! node's neighbor distribution can be replaced by its worst case inside a
//! KL ball ([`dro`]) and widened by mixing in a similar non-neighbor
//! ([`gea`]). Around that core sit BPR training ([`trainer`]), top-K
//! evaluation ([`eval`]), out-of-distribution splits ([`data`]) and
//! brute-force references for testing ([`oracle`]).

pub mod config;
pub mod data;
pub mod dro;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod gea;
pub mod graph;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod trainer;

pub use config::{DataConfig, RunConfig};
pub use data::{Dataset, IdMap, Interaction, SplitBundle, SplitMode, SyntheticConfig};
pub use dro::{BoundInputs, DroConfig, NeighborAffinity};
pub use embedding::EmbeddingTable;
pub use error::{Error, ErrorClass, Result};
pub use eval::{EvalConfig, MetricsReport, RankMetrics};
pub use gea::{EdgeOverlay, GeaConfig};
pub use graph::{InteractionGraph, NodeId, NormalizedAdjacency};
pub use model::{AdjacencySnapshot, LayerCombine, ModelConfig, PropagationOutput};
pub use trainer::{EpochRecord, FitSummary, Optimizer, TrainConfig, Trainer, TrainingTriple, Variant};
