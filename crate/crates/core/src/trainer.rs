//! BPR training with uniform negatives and periodic refresh of the robust
//! adjacency.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dro::reweight_adjacency;
use crate::embedding::{dot, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::gea::{apply_overlay, node_seed, select_overlay, EdgeOverlay};
use crate::graph::{InteractionGraph, NodeId, NormalizedAdjacency};
use crate::model::{backpropagate, propagate, AdjacencySnapshot, ModelConfig};

/// Rejection attempts per negative before enumerating the complement.
pub const NEGATIVE_RETRY_CAP: usize = 64;

const EPOCH_STREAM: u64 = 0x45_504f_4348;
const GEA_STREAM: u64 = 0x47_4541;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Weight of `‖E^(0)‖²_F` in every batch objective.
    pub l2_lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            l2_lambda: 1e-4,
            epochs: 100,
            batch_size: 2048,
            seed: 0,
            optimizer: Optimizer::default(),
            patience: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::Config("train.l2_lambda must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return Err(Error::Config(
                    "adam needs beta1, beta2 in [0, 1) and a positive epsilon".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Which aggregation path to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Robust reweighting and edge addition as configured.
    DrGnn,
    /// Plain symmetric normalization, never refreshed; DRO and GEA settings
    /// are ignored.
    LightGcn,
}

/// A user, an item they interacted with, and an item they did not. Items are
/// item indices, not node ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingTriple {
    pub user: usize,
    pub positive: usize,
    pub negative: usize,
}

/// `−ln σ(s_pos − s_neg)`, i.e. `softplus(s_neg − s_pos)`.
pub fn bpr_loss(score_pos: f64, score_neg: f64) -> f64 {
    softplus(score_neg - score_pos)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One uniformly drawn non-interacted item per entry of `users`, `None` for
/// users who interacted with every item.
pub fn sample_negatives<R: Rng>(graph: &InteractionGraph, users: &[usize], rng: &mut R) -> Vec<Option<usize>> {
    let num_items = graph.num_items();
    let offset = graph.num_users();
    users
        .iter()
        .map(|&u| {
            let node = graph.user_node(u).index();
            let deg = graph.degree(node);
            if deg >= num_items {
                log::warn!("user {u} interacted with every item; skipped");
                return None;
            }
            for _ in 0..NEGATIVE_RETRY_CAP {
                let item = rng.gen_range(0..num_items);
                if !graph.has_edge(node, offset + item) {
                    return Some(item);
                }
            }
            // Dense rows: draw the k-th complement item directly.
            let mut item = rng.gen_range(0..num_items - deg);
            for &n in graph.neighbors(node) {
                if n as usize - offset <= item {
                    item += 1;
                } else {
                    break;
                }
            }
            Some(item)
        })
        .collect()
}

fn check_triples(num_users: usize, num_nodes: usize, triples: &[TrainingTriple]) -> Result<()> {
    let num_items = num_nodes - num_users;
    if let Some(t) = triples
        .iter()
        .find(|t| t.user >= num_users || t.positive >= num_items || t.negative >= num_items)
    {
        return Err(Error::InvalidArgument(format!("triple {t:?} out of range")));
    }
    Ok(())
}

/// Mean BPR loss over `triples` plus `λ‖E^(0)‖²_F`.
pub fn batch_objective(
    snapshot: &AdjacencySnapshot,
    embeddings: &EmbeddingTable,
    model: &ModelConfig,
    num_users: usize,
    triples: &[TrainingTriple],
    l2_lambda: f64,
) -> Result<f64> {
    check_triples(num_users, embeddings.rows(), triples)?;
    let out = propagate(snapshot, embeddings, model.layers, model.combine)?;
    let f = &out.combined;
    let bpr: f64 = triples
        .iter()
        .map(|t| {
            let u = f.row(t.user);
            bpr_loss(dot(u, f.row(num_users + t.positive)), dot(u, f.row(num_users + t.negative)))
        })
        .sum();
    Ok(bpr / triples.len().max(1) as f64 + l2_lambda * embeddings.frobenius_sq())
}

/// [`batch_objective`] and its gradient with respect to `E^(0)`.
pub fn batch_gradient(
    snapshot: &AdjacencySnapshot,
    embeddings: &EmbeddingTable,
    model: &ModelConfig,
    num_users: usize,
    triples: &[TrainingTriple],
    l2_lambda: f64,
) -> Result<(f64, EmbeddingTable)> {
    check_triples(num_users, embeddings.rows(), triples)?;
    let out = propagate(snapshot, embeddings, model.layers, model.combine)?;
    let f = &out.combined;
    let dim = f.dim();
    let scale = 1.0 / triples.len().max(1) as f64;
    let mut upstream = EmbeddingTable::zeros(f.rows(), dim);
    let mut bpr = 0.0;
    for t in triples {
        let (u, i, j) = (t.user, num_users + t.positive, num_users + t.negative);
        let delta = dot(f.row(u), f.row(i)) - dot(f.row(u), f.row(j));
        bpr += softplus(-delta);
        let c = -sigmoid(-delta) * scale;
        for k in 0..dim {
            let (fu, fi, fj) = (f.row(u)[k], f.row(i)[k], f.row(j)[k]);
            upstream.row_mut(u)[k] += c * (fi - fj);
            upstream.row_mut(i)[k] += c * fu;
            upstream.row_mut(j)[k] -= c * fu;
        }
    }
    let mut grad = backpropagate(snapshot, &out, &upstream)?;
    if l2_lambda != 0.0 {
        grad.add_scaled(2.0 * l2_lambda, embeddings);
    }
    Ok((bpr * scale + l2_lambda * embeddings.frobenius_sq(), grad))
}

#[derive(Debug, Clone)]
enum OptimizerState {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        m: EmbeddingTable,
        v: EmbeddingTable,
        t: u64,
    },
}

impl OptimizerState {
    fn new(kind: Optimizer, rows: usize, dim: usize) -> Self {
        match kind {
            Optimizer::Sgd => OptimizerState::Sgd,
            Optimizer::Adam { beta1, beta2, epsilon } => OptimizerState::Adam {
                beta1,
                beta2,
                epsilon,
                m: EmbeddingTable::zeros(rows, dim),
                v: EmbeddingTable::zeros(rows, dim),
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut EmbeddingTable, grad: &EmbeddingTable, lr: f64) {
        match self {
            OptimizerState::Sgd => params.add_scaled(-lr, grad),
            OptimizerState::Adam {
                beta1,
                beta2,
                epsilon,
                m,
                v,
                t,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t as i32);
                let c2 = 1.0 - beta2.powi(*t as i32);
                let (b1, b2, eps) = (*beta1, *beta2, *epsilon);
                let it = params
                    .as_mut_slice()
                    .iter_mut()
                    .zip(grad.as_slice())
                    .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice()));
                for ((p, &g), (mk, vk)) in it {
                    *mk = b1 * *mk + (1.0 - b1) * g;
                    *vk = b2 * *vk + (1.0 - b2) * g * g;
                    *p -= lr * (*mk / c1) / ((*vk / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_ndcg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub best_epoch: Option<usize>,
    pub best_val_ndcg: Option<f64>,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
struct Best {
    ndcg: f64,
    epoch: usize,
    embeddings: EmbeddingTable,
    snapshot: AdjacencySnapshot,
}

/// Training state: parameters, optimizer moments, the current adjacency
/// snapshot, and early-stopping bookkeeping.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: RunConfig,
    variant: Variant,
    graph: InteractionGraph,
    base: NormalizedAdjacency,
    pairs: Vec<(usize, usize)>,
    embeddings: EmbeddingTable,
    optimizer: OptimizerState,
    overlay: EdgeOverlay,
    snapshot: AdjacencySnapshot,
    epoch: usize,
    step: u64,
    refreshes: u64,
    best: Option<Best>,
    bad_epochs: usize,
}

impl Trainer {
    pub fn new(graph: InteractionGraph, config: &RunConfig, variant: Variant) -> Result<Self> {
        config.validate()?;
        let n = graph.num_nodes();
        let embeddings =
            EmbeddingTable::random_normal(n, config.model.dim, config.model.init_std, config.train.seed);
        let base = graph.normalize();
        let mut trainer = Self {
            pairs: graph.edges().collect(),
            optimizer: OptimizerState::new(config.train.optimizer, n, config.model.dim),
            overlay: EdgeOverlay::empty(n),
            snapshot: AdjacencySnapshot::new(base.clone()),
            config: config.clone(),
            variant,
            graph,
            base,
            embeddings,
            epoch: 0,
            step: 0,
            refreshes: 0,
            best: None,
            bad_epochs: 0,
        };
        trainer.refresh()?;
        Ok(trainer)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn graph(&self) -> &InteractionGraph {
        &self.graph
    }

    pub fn base_adjacency(&self) -> &NormalizedAdjacency {
        &self.base
    }

    /// Layer-0 embeddings (the trainable parameters).
    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.embeddings
    }

    pub fn snapshot(&self) -> &AdjacencySnapshot {
        &self.snapshot
    }

    pub fn overlay(&self) -> &EdgeOverlay {
        &self.overlay
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn set_epochs(&mut self, epochs: usize) {
        self.config.train.epochs = epochs;
    }

    fn robust(&self) -> bool {
        self.variant == Variant::DrGnn && (self.config.dro.enabled() || self.config.gea.active())
    }

    fn gea_period(&self) -> usize {
        self.config.gea.refresh_period.unwrap_or(self.config.dro.refresh_period)
    }

    fn refresh_due(&self) -> bool {
        if !self.robust() {
            return false;
        }
        let gea_due = self.config.gea.active() && self.epoch.is_multiple_of(self.gea_period());
        let dro_due = self.config.dro.enabled() && self.epoch.is_multiple_of(self.config.dro.refresh_period);
        gea_due || dro_due
    }

    /// Re-selects the overlay (when edge addition is on and due) and then
    /// recomputes the reweighted adjacency over the mixed distributions.
    pub fn refresh(&mut self) -> Result<()> {
        if !self.robust() {
            return Ok(());
        }
        let (dro, gea) = (self.config.dro, self.config.gea);
        if gea.active() && (self.refreshes == 0 || self.epoch.is_multiple_of(self.gea_period())) {
            let seed = node_seed(self.config.train.seed ^ GEA_STREAM, self.refreshes as usize);
            self.overlay = select_overlay(&self.graph, &self.embeddings, &gea, dro.l2_normalize, seed)?;
        }
        let mixed = apply_overlay(&self.base, &self.overlay)?;
        let adj = if dro.enabled() {
            reweight_adjacency(&mixed, &self.embeddings, dro.alpha, dro.l2_normalize)?
        } else {
            mixed
        };
        self.snapshot = AdjacencySnapshot::new(adj);
        self.refreshes += 1;
        log::debug!(
            "refreshed adjacency at epoch {} ({} added edges)",
            self.epoch,
            self.overlay.num_added()
        );
        Ok(())
    }

    /// The epoch's shuffled triples: every training edge once, each with a
    /// fresh uniform negative.
    pub fn epoch_triples(&self, epoch: usize) -> Vec<TrainingTriple> {
        let mut rng = ChaCha8Rng::seed_from_u64(node_seed(self.config.train.seed ^ EPOCH_STREAM, epoch));
        let mut order = self.pairs.clone();
        order.shuffle(&mut rng);
        let users: Vec<usize> = order.iter().map(|&(u, _)| u).collect();
        let negatives = sample_negatives(&self.graph, &users, &mut rng);
        order
            .into_iter()
            .zip(negatives)
            .filter_map(|((user, positive), neg)| {
                neg.map(|negative| TrainingTriple {
                    user,
                    positive,
                    negative,
                })
            })
            .collect()
    }

    /// One pass over the training edges; returns the mean batch objective.
    pub fn train_epoch(&mut self) -> Result<f64> {
        let triples = self.epoch_triples(self.epoch);
        let train = self.config.train;
        let mut total = 0.0;
        for batch in triples.chunks(train.batch_size) {
            let (loss, grad) = batch_gradient(
                &self.snapshot,
                &self.embeddings,
                &self.config.model,
                self.graph.num_users(),
                batch,
                train.l2_lambda,
            )?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Diverged {
                    epoch: self.epoch,
                    loss,
                });
            }
            self.optimizer.step(&mut self.embeddings, &grad, train.learning_rate);
            self.step += 1;
            total += loss * batch.len() as f64;
        }
        let loss = total / triples.len().max(1) as f64;
        if !loss.is_finite() || !self.embeddings.is_finite() {
            return Err(Error::Diverged {
                epoch: self.epoch,
                loss,
            });
        }
        self.epoch += 1;
        if self.refresh_due() {
            self.refresh()?;
        }
        Ok(loss)
    }

    /// Final embeddings under the current parameters and snapshot.
    pub fn current_final_embeddings(&self) -> Result<EmbeddingTable> {
        let m = &self.config.model;
        Ok(propagate(&self.snapshot, &self.embeddings, m.layers, m.combine)?.combined)
    }

    /// Final embeddings of the best validated epoch, or of the current state
    /// when nothing was validated.
    pub fn final_embeddings(&self) -> Result<EmbeddingTable> {
        match &self.best {
            Some(b) => {
                let m = &self.config.model;
                Ok(propagate(&b.snapshot, &b.embeddings, m.layers, m.combine)?.combined)
            }
            None => self.current_final_embeddings(),
        }
    }

    /// Trains until `train.epochs` epochs have completed or validation NDCG
    /// stops improving for `train.patience` epochs.
    pub fn fit(
        &mut self,
        valid: Option<&[Vec<usize>]>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<FitSummary> {
        let valid = valid.filter(|v| v.iter().any(|l| !l.is_empty()));
        let mut history = Vec::new();
        let mut stopped_early = false;
        while self.epoch < self.config.train.epochs {
            let loss = self.train_epoch()?;
            let val_ndcg = match valid {
                Some(lists) => {
                    let f = self.current_final_embeddings()?;
                    Some(evaluate(&f, &self.graph, lists, self.config.eval.k, false)?.ndcg)
                }
                None => None,
            };
            let record = EpochRecord {
                epoch: self.epoch,
                loss,
                val_ndcg,
            };
            log::info!(
                "epoch {} loss {:.6}{}",
                record.epoch,
                loss,
                val_ndcg.map_or(String::new(), |v| format!(" val_ndcg {v:.6}"))
            );
            on_epoch(&record);
            history.push(record);
            if let Some(ndcg) = val_ndcg {
                if self.best.as_ref().is_none_or(|b| ndcg > b.ndcg) {
                    self.best = Some(Best {
                        ndcg,
                        epoch: self.epoch,
                        embeddings: self.embeddings.clone(),
                        snapshot: self.snapshot.clone(),
                    });
                    self.bad_epochs = 0;
                } else {
                    self.bad_epochs += 1;
                    let patience = self.config.train.patience;
                    if patience > 0 && self.bad_epochs >= patience {
                        stopped_early = true;
                        break;
                    }
                }
            }
        }
        Ok(FitSummary {
            epochs_run: history.len(),
            stopped_early,
            best_epoch: self.best.as_ref().map(|b| b.epoch),
            best_val_ndcg: self.best.as_ref().map(|b| b.ndcg),
            history,
        })
    }

    /// Writes the full training state into `dir`:
    /// `embeddings.txt` (layer 0), `final.txt` (what evaluation consumes),
    /// `adjacency.tsv`, `overlay.tsv`, optimizer moments, the best validated
    /// state if any, and `checkpoint.json`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.embeddings.save(&dir.join("embeddings.txt"))?;
        self.final_embeddings()?.save(&dir.join("final.txt"))?;
        write_adjacency(&dir.join("adjacency.tsv"), self.snapshot.adjacency())?;
        write_overlay(&dir.join("overlay.tsv"), &self.overlay)?;
        let mut adam_t = None;
        if let OptimizerState::Adam { m, v, t, .. } = &self.optimizer {
            let mut both = m.clone().into_vec();
            both.extend_from_slice(v.as_slice());
            EmbeddingTable::from_vec(2 * m.rows(), m.dim(), both)?.save(&dir.join("adam.txt"))?;
            adam_t = Some(*t);
        }
        if let Some(b) = &self.best {
            b.embeddings.save(&dir.join("best_embeddings.txt"))?;
            write_adjacency(&dir.join("best_adjacency.tsv"), b.snapshot.adjacency())?;
        }
        let meta = CheckpointMeta {
            config: self.config.clone(),
            variant: self.variant,
            num_users: self.graph.num_users(),
            num_items: self.graph.num_items(),
            epoch: self.epoch,
            step: self.step,
            refreshes: self.refreshes,
            adam_t,
            best_epoch: self.best.as_ref().map(|b| b.epoch),
            best_val_ndcg: self.best.as_ref().map(|b| b.ndcg),
            bad_epochs: self.bad_epochs,
        };
        let path = dir.join("checkpoint.json");
        std::fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Restores a trainer saved by [`Trainer::save_checkpoint`] on the same
    /// training graph.
    pub fn resume(dir: &Path, graph: InteractionGraph) -> Result<Self> {
        let path = dir.join("checkpoint.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        meta.config.validate()?;
        if meta.num_users != graph.num_users() || meta.num_items != graph.num_items() {
            return Err(Error::Data(format!(
                "checkpoint was trained on {} users and {} items, data has {} and {}",
                meta.num_users,
                meta.num_items,
                graph.num_users(),
                graph.num_items()
            )));
        }
        let n = graph.num_nodes();
        let dim = meta.config.model.dim;
        let embeddings = load_table(&dir.join("embeddings.txt"), n, dim)?;
        let mut optimizer = OptimizerState::new(meta.config.train.optimizer, n, dim);
        if let OptimizerState::Adam { m, v, t, .. } = &mut optimizer {
            let both = load_table(&dir.join("adam.txt"), 2 * n, dim)?.into_vec();
            let (mm, vv) = both.split_at(n * dim);
            *m = EmbeddingTable::from_vec(n, dim, mm.to_vec())?;
            *v = EmbeddingTable::from_vec(n, dim, vv.to_vec())?;
            *t = meta.adam_t.unwrap_or(0);
        }
        let adjacency = read_adjacency(&dir.join("adjacency.tsv"), graph.degrees())?;
        let overlay = read_overlay(&dir.join("overlay.tsv"), n)?;
        let best = match (meta.best_epoch, meta.best_val_ndcg) {
            (Some(epoch), Some(ndcg)) => Some(Best {
                ndcg,
                epoch,
                embeddings: load_table(&dir.join("best_embeddings.txt"), n, dim)?,
                snapshot: AdjacencySnapshot::new(read_adjacency(
                    &dir.join("best_adjacency.tsv"),
                    graph.degrees(),
                )?),
            }),
            _ => None,
        };
        Ok(Self {
            pairs: graph.edges().collect(),
            base: graph.normalize(),
            config: meta.config,
            variant: meta.variant,
            graph,
            embeddings,
            optimizer,
            overlay,
            snapshot: AdjacencySnapshot::new(adjacency),
            epoch: meta.epoch,
            step: meta.step,
            refreshes: meta.refreshes,
            best,
            bad_epochs: meta.bad_epochs,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    config: RunConfig,
    variant: Variant,
    num_users: usize,
    num_items: usize,
    epoch: usize,
    step: u64,
    refreshes: u64,
    adam_t: Option<u64>,
    best_epoch: Option<usize>,
    best_val_ndcg: Option<f64>,
    bad_epochs: usize,
}

fn load_table(path: &Path, rows: usize, dim: usize) -> Result<EmbeddingTable> {
    let t = EmbeddingTable::load(path)?;
    if t.rows() != rows || t.dim() != dim {
        return Err(Error::Shape(format!(
            "{}: {}x{} table, expected {rows}x{dim}",
            path.display(),
            t.rows(),
            t.dim()
        )));
    }
    Ok(t)
}

/// `row<TAB>col<TAB>value` per stored entry, in CSR order.
pub fn write_adjacency(path: &Path, adj: &NormalizedAdjacency) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for u in 0..adj.num_nodes() {
        let (cols, values) = adj.row(u);
        for (c, v) in cols.iter().zip(values) {
            writeln!(w, "{u}\t{c}\t{v}").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads [`write_adjacency`] output; `degrees` are the graph degrees the
/// matrix was normalized with.
pub fn read_adjacency(path: &Path, degrees: &[u32]) -> Result<NormalizedAdjacency> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let n = degrees.len();
    let mut counts = vec![0usize; n + 1];
    let mut cols = Vec::new();
    let mut values = Vec::new();
    let mut prev: Option<(usize, u32)> = None;
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let bad = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            message: m,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(bad(format!("expected 3 columns, found {}", f.len())));
        }
        let r: usize = f[0].parse().map_err(|e| bad(format!("row: {e}")))?;
        let c: u32 = f[1].parse().map_err(|e| bad(format!("col: {e}")))?;
        let v: f64 = f[2].parse().map_err(|e| bad(format!("value: {e}")))?;
        if r >= n || prev.is_some_and(|p| (r, c) <= p) {
            return Err(bad("entries out of order or out of range".into()));
        }
        prev = Some((r, c));
        counts[r + 1] += 1;
        cols.push(c);
        values.push(v);
    }
    for k in 0..n {
        counts[k + 1] += counts[k];
    }
    NormalizedAdjacency::from_csr(counts, cols, values, degrees.to_vec())
}

fn write_overlay(path: &Path, overlay: &EdgeOverlay) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "gamma\t{}", overlay.gamma()).map_err(io)?;
    for u in 0..overlay.num_nodes() {
        for v in overlay.added(u) {
            writeln!(w, "{u}\t{v}").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn read_overlay(path: &Path, num_nodes: usize) -> Result<EdgeOverlay> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, m: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: m.into(),
    };
    let mut lines = text.lines();
    let gamma: f64 = lines
        .next()
        .and_then(|l| l.strip_prefix("gamma\t"))
        .and_then(|g| g.parse().ok())
        .ok_or_else(|| bad(1, "missing gamma header"))?;
    let mut added = vec![Vec::new(); num_nodes];
    for (k, line) in lines.enumerate() {
        let mut f = line.split('\t').map(str::parse::<usize>);
        match (f.next(), f.next(), f.next()) {
            (Some(Ok(u)), Some(Ok(v)), None) if u < num_nodes && v < num_nodes => {
                added[u].push(NodeId::from(v))
            }
            _ => return Err(bad(k + 2, "expected node<TAB>added")),
        }
    }
    Ok(EdgeOverlay::from_added(gamma, added))
}

/// `epoch,loss,val_ndcg` with an empty last field when nothing was
/// validated.
pub fn write_log_csv(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "epoch,loss,val_ndcg").map_err(io)?;
    for r in records {
        match r.val_ndcg {
            Some(v) => writeln!(w, "{},{},{}", r.epoch, r.loss, v),
            None => writeln!(w, "{},{},", r.epoch, r.loss),
        }
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
