//! Full-catalog top-K evaluation with training items masked out.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embedding::{dot, EmbeddingTable};
use crate::error::{Error, Result};
use crate::graph::InteractionGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RankMetrics {
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub ndcg: f64,
    pub precision: f64,
    pub recall: f64,
    #[serde(rename = "users")]
    pub num_evaluated_users: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_user: Option<Vec<(usize, RankMetrics)>>,
}

/// Descending score, ascending item id.
fn rank_order(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn item_scores(
    final_embeddings: &EmbeddingTable,
    num_users: usize,
    num_items: usize,
    user: usize,
    mask: &[usize],
) -> Vec<(f64, u32)> {
    let eu = final_embeddings.row(user);
    let mut scores: Vec<(f64, u32)> = (0..num_items)
        .map(|i| (dot(eu, final_embeddings.row(num_users + i)), i as u32))
        .collect();
    for &i in mask {
        scores[i].0 = f64::NEG_INFINITY;
    }
    scores
}

fn check_table(final_embeddings: &EmbeddingTable, num_users: usize, num_items: usize, user: usize) -> Result<()> {
    if final_embeddings.rows() != num_users + num_items {
        return Err(Error::Shape(format!(
            "{} embedding rows for {num_users} users and {num_items} items",
            final_embeddings.rows()
        )));
    }
    if user >= num_users {
        return Err(Error::InvalidArgument(format!("user {user} out of range")));
    }
    Ok(())
}

/// All items ordered by descending score, training positives (`mask`, item
/// indices) pushed to the end with score −∞, ties broken by ascending id.
pub fn rank_items(
    final_embeddings: &EmbeddingTable,
    num_users: usize,
    num_items: usize,
    user: usize,
    mask: &[usize],
) -> Result<Vec<usize>> {
    check_table(final_embeddings, num_users, num_items, user)?;
    let mut scores = item_scores(final_embeddings, num_users, num_items, user, mask);
    scores.sort_by(rank_order);
    Ok(scores.into_iter().map(|(_, i)| i as usize).collect())
}

/// Head of [`rank_items`] without sorting the whole catalog.
pub fn top_k_items(
    final_embeddings: &EmbeddingTable,
    num_users: usize,
    num_items: usize,
    user: usize,
    mask: &[usize],
    k: usize,
) -> Result<Vec<usize>> {
    check_table(final_embeddings, num_users, num_items, user)?;
    let mut scores = item_scores(final_embeddings, num_users, num_items, user, mask);
    let k = k.min(scores.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < scores.len() {
        scores.select_nth_unstable_by(k - 1, rank_order);
        scores.truncate(k);
    }
    scores.sort_by(rank_order);
    Ok(scores.into_iter().map(|(_, i)| i as usize).collect())
}

/// Precision, recall and NDCG at `k` with binary gains and `log2(rank+1)`
/// discounts. `relevant` must be sorted ascending. Returns `None` for an
/// empty relevant set.
pub fn metrics_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Result<Option<RankMetrics>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if relevant.is_empty() {
        return Ok(None);
    }
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (pos, item) in ranked.iter().take(k).enumerate() {
        if relevant.binary_search(item).is_ok() {
            hits += 1;
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let idcg: f64 = (0..relevant.len().min(k))
        .map(|pos| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    Ok(Some(RankMetrics {
        precision: hits as f64 / k as f64,
        recall: hits as f64 / relevant.len() as f64,
        ndcg: dcg / idcg,
    }))
}

/// Mean metrics over users with a non-empty held-out list. `held_out[u]`
/// lists item indices for user `u` (sorted ascending); `train` supplies the
/// mask.
pub fn evaluate(
    final_embeddings: &EmbeddingTable,
    train: &InteractionGraph,
    held_out: &[Vec<usize>],
    k: usize,
    keep_per_user: bool,
) -> Result<MetricsReport> {
    let (num_users, num_items) = (train.num_users(), train.num_items());
    if held_out.len() != num_users {
        return Err(Error::Shape(format!(
            "{} held-out lists for {num_users} users",
            held_out.len()
        )));
    }
    let mut sum = RankMetrics::default();
    let mut count = 0usize;
    let mut per_user = keep_per_user.then(Vec::new);
    let mut mask = Vec::new();
    for (user, relevant) in held_out.iter().enumerate() {
        if relevant.is_empty() {
            continue;
        }
        mask.clear();
        mask.extend(train.user_items(user));
        let ranked = top_k_items(final_embeddings, num_users, num_items, user, &mask, k)?;
        if let Some(m) = metrics_at_k(&ranked, relevant, k)? {
            sum.precision += m.precision;
            sum.recall += m.recall;
            sum.ndcg += m.ndcg;
            count += 1;
            if let Some(p) = per_user.as_mut() {
                p.push((user, m));
            }
        }
    }
    let denom = count.max(1) as f64;
    Ok(MetricsReport {
        k,
        ndcg: sum.ndcg / denom,
        precision: sum.precision / denom,
        recall: sum.recall / denom,
        num_evaluated_users: count,
        per_user,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(user: Vec<f64>, items: &[f64]) -> EmbeddingTable {
        let mut rows = vec![user];
        rows.extend(items.iter().map(|&s| vec![s]));
        EmbeddingTable::from_rows(&rows).unwrap()
    }

    #[test]
    fn ranks_by_score() {
        let t = table(vec![1.0], &[0.1, 0.9]);
        assert_eq!(rank_items(&t, 1, 2, 0, &[]).unwrap(), vec![1, 0]);
    }

    #[test]
    fn masked_item_drops_out_of_head() {
        let t = table(vec![1.0], &[0.1, 0.9, 0.5]);
        assert_eq!(rank_items(&t, 1, 3, 0, &[1]).unwrap(), vec![2, 0, 1]);
        assert_eq!(top_k_items(&t, 1, 3, 0, &[1], 2).unwrap(), vec![2, 0]);
    }

    #[test]
    fn equal_scores_ascending_ids() {
        let t = table(vec![1.0], &[0.5, 0.5, 0.5, 0.7]);
        assert_eq!(rank_items(&t, 1, 4, 0, &[]).unwrap(), vec![3, 0, 1, 2]);
        assert_eq!(top_k_items(&t, 1, 4, 0, &[], 3).unwrap(), vec![3, 0, 1]);
    }

    #[test]
    fn perfect_and_empty() {
        let m = metrics_at_k(&[4, 2, 7], &[2, 4, 7], 3).unwrap().unwrap();
        assert_eq!((m.precision, m.recall, m.ndcg), (1.0, 1.0, 1.0));
        let m = metrics_at_k(&[0, 1], &[5], 2).unwrap().unwrap();
        assert_eq!((m.precision, m.recall, m.ndcg), (0.0, 0.0, 0.0));
        assert_eq!(metrics_at_k(&[0], &[], 1).unwrap(), None);
        assert!(metrics_at_k(&[0], &[0], 0).is_err());
    }

    #[test]
    fn second_position_hit() {
        let m = metrics_at_k(&[3, 9], &[9], 2).unwrap().unwrap();
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 1.0);
        assert!((m.ndcg - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((m.ndcg - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn report_skips_users_without_held_out_items() {
        let g = InteractionGraph::build(&[(0, 0), (1, 1)], 2, 3).unwrap();
        let e = EmbeddingTable::from_rows(&[
            vec![1.0],
            vec![1.0],
            vec![0.1],
            vec![0.9],
            vec![0.5],
        ])
        .unwrap();
        let report = evaluate(&e, &g, &[vec![1], vec![]], 1, true).unwrap();
        assert_eq!(report.num_evaluated_users, 1);
        assert_eq!(report.ndcg, 1.0);
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["users"], 1);
        assert_eq!(json["k"], 1);
    }
}
