//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p drgnn-core --test acceptance`.

mod support;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drgnn::data::{split_popularity, synthetic_interactions};
use drgnn::dro::{
    aggregation_equivalence_check, generalization_bound, kl_divergence, neighbor_affinities, reweight_adjacency,
    worst_case_distribution,
};
use drgnn::embedding::dot;
use drgnn::eval::metrics_at_k;
use drgnn::oracle::{brute_force_worst_case, finite_difference_gradient, lagrange_alpha_for_eta};
use drgnn::pipeline::{save_sweep_csv, sweep_alpha, train_and_evaluate, SweepRow};
use drgnn::trainer::{batch_gradient, batch_objective};
use drgnn::{
    AdjacencySnapshot, BoundInputs, Dataset, InteractionGraph, ModelConfig, RunConfig, SyntheticConfig, Trainer,
    TrainingTriple, Variant,
};

use support::fixed::bound_reference;
use support::{random_embeddings, random_graph};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn lemma_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let graph = random_graph(&mut rng, 50, false);
        let emb = random_embeddings(&mut rng, graph.num_nodes(), 8);
        worst = worst.max(aggregation_equivalence_check(&graph.normalize(), &emb).unwrap());
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-10 && elapsed < Duration::from_secs(5),
        format!("max residual {worst:.2e} over 100 graphs in {elapsed:.2?}"),
    )
}

fn closed_form_optimality() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_round_trip = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(2..=6);
        let base = vec![1.0 / n as f64; n];
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let alpha = 10f64.powf(rng.gen_range(-1.3..0.7));
        let pstar = worst_case_distribution(&base, &g, alpha).unwrap();
        let eta = kl_divergence(&pstar, &base);
        let closed = dot(&pstar, &g);
        let (_, incumbent) = brute_force_worst_case(&base, &g, eta, 300, &mut rng).unwrap();
        worst_gap = worst_gap.max(incumbent - closed);
        // Compared as distributions: alpha itself is ill-conditioned in eta
        // once P* is close to a point mass.
        let back = lagrange_alpha_for_eta(&base, &g, eta).unwrap();
        let again = worst_case_distribution(&base, &g, back).unwrap();
        let diff = pstar.iter().zip(&again).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst_round_trip = worst_round_trip.max(diff);
    }
    let elapsed = start.elapsed();
    outcome(
        worst_gap <= 1e-6 && worst_round_trip <= 1e-8 && elapsed < Duration::from_secs(60),
        format!(
            "max(brute force - closed form) {worst_gap:.2e}, P* after alpha round trip differs by {worst_round_trip:.2e}, {elapsed:.2?}"
        ),
    )
}

fn bridge() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let graph = random_graph(&mut rng, 50, false);
        let emb = random_embeddings(&mut rng, graph.num_nodes(), 6);
        let alpha = 10f64.powf(rng.gen_range(-1.5..1.0));
        let base = graph.normalize();
        let reweighted = reweight_adjacency(&base, &emb, alpha, true).unwrap();
        let applied = reweighted.apply(&emb).unwrap();
        let g = neighbor_affinities(&base, &emb, true).unwrap();
        for u in 0..graph.num_nodes() {
            let nbrs = graph.neighbors(u);
            if nbrs.is_empty() {
                continue;
            }
            let uniform = vec![1.0 / nbrs.len() as f64; nbrs.len()];
            let pstar = worst_case_distribution(&uniform, g.row(&base, u), alpha).unwrap();
            let du = graph.degree(u) as f64;
            for c in 0..emb.dim() {
                let want: f64 = nbrs
                    .iter()
                    .zip(&pstar)
                    .map(|(&v, p)| p * emb.row(v as usize)[c] / (graph.degree(v as usize) as f64).sqrt())
                    .sum::<f64>()
                    * du.sqrt();
                worst = worst.max((applied.row(u)[c] - want).abs());
            }
        }
    }
    outcome(worst < 1e-10, format!("max deviation {worst:.2e} over 50 graphs"))
}

fn toy_dataset() -> Dataset {
    let syn = SyntheticConfig {
        num_users: 120,
        num_items: 80,
        num_topics: 4,
        interactions_per_user: 10,
        ..SyntheticConfig::default()
    };
    let rows = synthetic_interactions(&syn).unwrap();
    Dataset::from_bundle(&split_popularity(&rows, 2, 0).unwrap()).unwrap()
}

fn baseline_recovery() -> Outcome {
    let dataset = toy_dataset();
    let mut cfg = RunConfig::default();
    cfg.train.epochs = 5;
    cfg.train.batch_size = 128;
    cfg.dro.alpha = f64::INFINITY;
    cfg.gea.enabled = false;
    let mut robust = Trainer::new(dataset.train_graph().unwrap(), &cfg, Variant::DrGnn).unwrap();
    let mut plain = Trainer::new(dataset.train_graph().unwrap(), &cfg, Variant::LightGcn).unwrap();
    let mut identical = true;
    for _ in 0..5 {
        let a = robust.train_epoch().unwrap();
        let b = plain.train_epoch().unwrap();
        identical &= a.to_bits() == b.to_bits();
    }
    let same_params = robust
        .embeddings()
        .as_slice()
        .iter()
        .zip(plain.embeddings().as_slice())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    outcome(
        identical && same_params,
        format!("5 epochs: losses identical {identical}, parameters bit-identical {same_params}"),
    )
}

fn gradient_check() -> Outcome {
    let pairs = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 0), (2, 3), (3, 2), (3, 3)];
    let graph = InteractionGraph::build(&pairs, 4, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let emb = random_embeddings(&mut rng, 8, 3);
    let triples = [
        TrainingTriple { user: 0, positive: 0, negative: 2 },
        TrainingTriple { user: 1, positive: 2, negative: 3 },
        TrainingTriple { user: 2, positive: 3, negative: 1 },
        TrainingTriple { user: 3, positive: 2, negative: 0 },
        TrainingTriple { user: 0, positive: 1, negative: 3 },
    ];
    let model = ModelConfig::default();
    let base = graph.normalize();
    let snapshots = [
        ("symmetric", AdjacencySnapshot::new(base.clone())),
        ("reweighted", AdjacencySnapshot::new(reweight_adjacency(&base, &emb, 0.5, true).unwrap())),
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, snap) in &snapshots {
        let (_, analytic) = batch_gradient(snap, &emb, &model, 4, &triples, 1e-3).unwrap();
        let numeric = finite_difference_gradient(
            |e| batch_objective(snap, e, &model, 4, &triples, 1e-3),
            &emb,
            1e-5,
        )
        .unwrap();
        let scale = numeric.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let rel = analytic.max_abs_diff(&numeric) / scale;
        pass &= rel < 1e-4;
        parts.push(format!("{name} rel err {rel:.2e}"));
    }
    outcome(pass, parts.join(", "))
}

// Directional experiments on synthetic popularity-shifted data.

const SEEDS: [u64; 3] = [0, 1, 2];
const ALPHAS: [f64; 5] = [0.1, 0.3, 1.0, 3.0, 1e9];
const HIGH_SHIFT_ZIPF: f64 = 1.2;
const LOW_SHIFT_ZIPF: f64 = 0.3;

struct Study {
    zipf: f64,
    shift: f64,
    baseline: f64,
    /// Mean test NDCG@20 per entry of `ALPHAS`.
    curve: Vec<f64>,
    per_seed_argmax: Vec<f64>,
    elapsed: Duration,
}

fn experiment_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.train.epochs = 40;
    cfg.train.l2_lambda = 1e-5;
    cfg.train.seed = seed;
    cfg.gea.enabled = true;
    cfg.gea.gamma = 0.8;
    cfg
}

fn run_study(zipf: f64) -> Study {
    let start = Instant::now();
    let n = SEEDS.len() as f64;
    let mut shift = 0.0;
    let mut baseline = 0.0;
    let mut curve = vec![0.0; ALPHAS.len()];
    let mut per_seed_argmax = Vec::new();
    for seed in SEEDS {
        let syn = SyntheticConfig {
            zipf_exponent: zipf,
            seed,
            ..SyntheticConfig::default()
        };
        let rows = synthetic_interactions(&syn).unwrap();
        let bundle = split_popularity(&rows, 3, seed).unwrap();
        shift += bundle.meta.shift_kl / n;
        let dataset = Dataset::from_bundle(&bundle).unwrap();
        let cfg = experiment_config(seed);
        let mut plain = cfg.clone();
        plain.dro.alpha = f64::INFINITY;
        plain.gea.enabled = false;
        let base = train_and_evaluate(&dataset, &plain, Variant::DrGnn).unwrap();
        baseline += base.test.unwrap().ndcg / n;
        let rows: Vec<SweepRow> = sweep_alpha(&dataset, &cfg, &ALPHAS).unwrap();
        if seed == SEEDS[0] {
            let dir = tempfile::tempdir().unwrap();
            save_sweep_csv(&dir.path().join("sweep.csv"), &rows).unwrap();
        }
        for (c, r) in curve.iter_mut().zip(&rows) {
            *c += r.ndcg / n;
        }
        per_seed_argmax.push(argmax_alpha(&rows.iter().map(|r| r.ndcg).collect::<Vec<_>>()));
    }
    Study {
        zipf,
        shift,
        baseline,
        curve,
        per_seed_argmax,
        elapsed: start.elapsed(),
    }
}

fn argmax_alpha(ndcg: &[f64]) -> f64 {
    let best = ndcg
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v > ndcg[b] { i } else { b });
    ALPHAS[best]
}

fn describe(study: &Study) -> String {
    let points: Vec<String> = ALPHAS
        .iter()
        .zip(&study.curve)
        .map(|(a, v)| format!("{a}:{v:.5}"))
        .collect();
    format!(
        "zipf {} shift {:.4} baseline {:.5} curve [{}]",
        study.zipf,
        study.shift,
        study.baseline,
        points.join(" ")
    )
}

fn high_shift() -> &'static Study {
    static STUDY: OnceLock<Study> = OnceLock::new();
    STUDY.get_or_init(|| run_study(HIGH_SHIFT_ZIPF))
}

fn low_shift() -> &'static Study {
    static STUDY: OnceLock<Study> = OnceLock::new();
    STUDY.get_or_init(|| run_study(LOW_SHIFT_ZIPF))
}

fn ood_win() -> Outcome {
    let s = high_shift();
    let best = s.curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gain = best / s.baseline - 1.0;
    outcome(
        gain >= 0.05 && s.elapsed < Duration::from_secs(600),
        format!(
            "best-alpha {best:.5} vs baseline {:.5}: {:+.1}% ({}; {:.0?})",
            s.baseline,
            100.0 * gain,
            describe(s),
            s.elapsed
        ),
    )
}

fn interior_optimum() -> Outcome {
    let s = high_shift();
    let (first, last) = (s.curve[0], s.curve[s.curve.len() - 1]);
    let inner = &s.curve[1..s.curve.len() - 1];
    let peak = inner.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    outcome(
        peak > first && peak > last,
        format!(
            "interior peak {peak:.5} vs alpha={} {first:.5} and alpha={} {last:.5}",
            ALPHAS[0],
            ALPHAS[ALPHAS.len() - 1]
        ),
    )
}

fn shift_direction() -> Outcome {
    let (hi, lo) = (high_shift(), low_shift());
    let (more, less) = if hi.shift >= lo.shift { (hi, lo) } else { (lo, hi) };
    let ratio = more.shift / less.shift;
    let a_more = argmax_alpha(&more.curve);
    let a_less = argmax_alpha(&less.curve);
    outcome(
        ratio >= 2.0 && a_more <= a_less,
        format!(
            "shift ratio {ratio:.2}; argmax alpha {a_more} (shift {:.4}, per seed {:?}) vs {a_less} (shift {:.4}, per seed {:?}); low-shift {}",
            more.shift,
            more.per_seed_argmax,
            less.shift,
            less.per_seed_argmax,
            describe(less)
        ),
    )
}

fn bound_calculator() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let inputs = BoundInputs {
            alpha: 10f64.powf(rng.gen_range(-1.0..1.0)),
            degree: rng.gen_range(1..=200) as f64,
            rho: rng.gen_range(1e-4..0.9),
            hypothesis_count: 10f64.powf(rng.gen_range(0.0..6.0)),
        };
        let got = generalization_bound(&inputs).unwrap();
        let want = bound_reference(inputs.alpha, inputs.degree, inputs.rho, inputs.hypothesis_count);
        worst = worst.max((got - want).abs() / want);
    }
    let at = |rho: f64, h: f64| {
        generalization_bound(&BoundInputs {
            alpha: 0.7,
            degree: 9.0,
            rho,
            hypothesis_count: h,
        })
        .unwrap()
    };
    let rhos: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).collect();
    let monotone = rhos.windows(2).all(|w| at(w[1], 50.0) <= at(w[0], 50.0));
    let vanishing: Vec<f64> = [1e-2, 1e-4, 1e-8, 1e-12].iter().map(|&t| at(1.0 - t, 1.0)).collect();
    let to_zero = vanishing.windows(2).all(|w| w[1] < w[0]) && vanishing[3] < 1e-5;
    outcome(
        worst < 1e-12 && monotone && to_zero,
        format!("max rel err {worst:.2e} vs 256-bit reference; non-increasing in rho {monotone}; -> 0 {to_zero}"),
    )
}

fn metric_fixtures() -> Outcome {
    let l = |r: usize| 1.0 / ((r + 1) as f64).log2();
    // (ranked, relevant, k, precision, recall, ndcg)
    let fixtures: Vec<(Vec<usize>, Vec<usize>, usize, f64, f64, f64)> = vec![
        (vec![3, 9], vec![9], 2, 0.5, 1.0, l(2)),
        (vec![1, 2, 3], vec![1], 3, 1.0 / 3.0, 1.0, 1.0),
        (vec![1, 2, 3], vec![4], 3, 0.0, 0.0, 0.0),
        (vec![1, 2, 3, 4], vec![1, 2], 2, 1.0, 1.0, 1.0),
        (vec![5, 1, 6, 2], vec![1, 2], 4, 0.5, 1.0, (l(2) + l(4)) / (l(1) + l(2))),
        (vec![7, 8, 9], vec![9], 3, 1.0 / 3.0, 1.0, 0.5),
        (vec![1, 2, 3, 4, 5], vec![2, 3, 10], 5, 0.4, 2.0 / 3.0, (l(2) + l(3)) / (l(1) + l(2) + l(3))),
        (vec![4, 3, 2, 1], vec![1, 2, 3, 4], 2, 1.0, 0.5, 1.0),
        (vec![10, 20, 30], vec![30], 2, 0.0, 0.0, 0.0),
        (vec![0, 1, 2, 3], vec![0, 3], 3, 1.0 / 3.0, 0.5, 1.0 / (l(1) + l(2))),
    ];
    let mut failures = Vec::new();
    for (n, (ranked, relevant, k, p, r, ndcg)) in fixtures.iter().enumerate() {
        let m = metrics_at_k(ranked, relevant, *k).unwrap().unwrap();
        if m.precision != *p || m.recall != *r || (m.ndcg - ndcg).abs() > 1e-15 {
            failures.push(format!("#{n}: got {m:?}"));
        }
    }
    let m = metrics_at_k(&[3, 9], &[9], 2).unwrap().unwrap();
    let rounded = (m.ndcg * 1e4).round() / 1e4 == 0.6309;
    outcome(
        failures.is_empty() && rounded,
        if failures.is_empty() {
            format!("10 fixtures match; second-position ndcg {:.4}", m.ndcg)
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    // Criteria 6-8 are empirical: their outcome is reported but does not fail
    // the run.
    let checks: [(&str, fn() -> Outcome); 10] = [
        ("1 aggregation equals half-step descent", lemma_identity),
        ("2 closed-form worst case is optimal", closed_form_optimality),
        ("3 reweighted propagation matches worst-case expectation", bridge),
        ("4 alpha=inf without edge addition is LightGCN", baseline_recovery),
        ("5 analytic gradients match finite differences", gradient_check),
        ("6 best-alpha NDCG beats baseline by >=5%", ood_win),
        ("7 alpha sweep peaks in the interior", interior_optimum),
        ("8 larger shift prefers smaller alpha", shift_direction),
        ("9 bound matches high-precision reference", bound_calculator),
        ("10 ranking metrics match fixtures", metric_fixtures),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut exact_failed = false;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = check();
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
            exact_failed |= !["6 ", "7 ", "8 "].iter().any(|p| name.starts_with(p));
        }
    }
    println!("{failed} criteria failed");
    if exact_failed {
        std::process::exit(1);
    }
}
