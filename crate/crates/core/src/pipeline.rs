//! Train-then-evaluate runs and α sweeps over an encoded dataset.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::dro::mean_worst_case_kl;
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::trainer::{FitSummary, Trainer, Variant};

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: FitSummary,
    pub valid: Option<MetricsReport>,
    pub test: Option<MetricsReport>,
    /// Mean `KL(P*_u ‖ P_u)` at the final parameters; 0 without reweighting.
    pub kl_of_pstar: f64,
    pub trainer: Trainer,
}

/// Trains on `dataset.train`, early-stopping on validation when it is
/// non-empty, then scores validation and test.
pub fn train_and_evaluate(dataset: &Dataset, config: &RunConfig, variant: Variant) -> Result<RunOutcome> {
    let graph = dataset.train_graph()?;
    let mut trainer = Trainer::new(graph, config, variant)?;
    let valid_lists = dataset.valid_lists();
    let summary = trainer.fit(Some(&valid_lists), |_| {})?;
    let final_embeddings = trainer.final_embeddings()?;
    let k = config.eval.k;
    let report = |lists: &[Vec<usize>]| -> Result<Option<MetricsReport>> {
        if lists.iter().all(Vec::is_empty) {
            return Ok(None);
        }
        evaluate(&final_embeddings, trainer.graph(), lists, k, false).map(Some)
    };
    let valid = report(&valid_lists)?;
    let test = report(&dataset.test_lists())?;
    let kl_of_pstar = if variant == Variant::DrGnn && config.dro.enabled() {
        mean_worst_case_kl(
            trainer.base_adjacency(),
            trainer.embeddings(),
            config.dro.alpha,
            config.dro.l2_normalize,
        )?
    } else {
        0.0
    };
    Ok(RunOutcome {
        summary,
        valid,
        test,
        kl_of_pstar,
        trainer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub ndcg: f64,
    pub kl_of_pstar: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// One full run per α with everything else fixed. Failed runs are kept as
/// rows with NaN metrics and the error message. Rows are sorted by α.
pub fn sweep_alpha(dataset: &Dataset, config: &RunConfig, alphas: &[f64]) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() {
        return Err(Error::InvalidArgument("no alpha values to sweep".into()));
    }
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rows = sorted
        .into_iter()
        .map(|alpha| {
            let mut cfg = config.clone();
            cfg.dro.alpha = alpha;
            let outcome = cfg
                .validate()
                .and_then(|_| train_and_evaluate(dataset, &cfg, Variant::DrGnn));
            match outcome {
                Ok(o) => SweepRow {
                    alpha,
                    ndcg: o.test.or(o.valid).map_or(f64::NAN, |m| m.ndcg),
                    kl_of_pstar: o.kl_of_pstar,
                    error: None,
                },
                Err(e) => {
                    log::error!("alpha {alpha}: {e}");
                    SweepRow {
                        alpha,
                        ndcg: f64::NAN,
                        kl_of_pstar: f64::NAN,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(rows)
}

/// `alpha,ndcg,kl_of_pstar`; infinite α is written as `inf`.
pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "alpha,ndcg,kl_of_pstar")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.alpha, r.ndcg, r.kl_of_pstar)?;
    }
    Ok(())
}

pub fn save_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_sweep_csv(&mut w, rows).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// The α with the highest NDCG, ignoring failed rows; the first wins ties.
pub fn best_alpha(rows: &[SweepRow]) -> Option<f64> {
    rows.iter()
        .filter(|r| r.ndcg.is_finite())
        .fold(None::<&SweepRow>, |best, r| match best {
            Some(b) if b.ndcg >= r.ndcg => Some(b),
            _ => Some(r),
        })
        .map(|r| r.alpha)
}
