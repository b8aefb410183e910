//! Slow reference computations used to certify the closed forms in tests.
//!
//! Nothing here uses the exponential-tilt solution: the worst case is found
//! by direct search over the KL ball.

use rand::Rng;
use rand_distr::{Dirichlet, Distribution};

use crate::dro::{kl_divergence, worst_case_distribution};
use crate::embedding::{dot, EmbeddingTable};
use crate::error::{Error, Result};

/// Largest support the brute-force search accepts.
pub const MAX_SUPPORT: usize = 8;

/// A point of the uncertainty set together with its distance to the base.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleSample {
    pub distribution: Vec<f64>,
    pub kl: f64,
}

impl FeasibleSample {
    pub fn new(distribution: Vec<f64>, base: &[f64]) -> Self {
        let kl = kl_divergence(&distribution, base);
        Self { distribution, kl }
    }
}

/// Pulls `p` toward `base` along the segment between them until it lies in
/// the KL ball. The returned point is always feasible.
fn pull_into_ball(p: Vec<f64>, base: &[f64], eta: f64) -> Vec<f64> {
    if kl_divergence(&p, base) <= eta {
        return p;
    }
    let mix = |t: f64| -> Vec<f64> { p.iter().zip(base).map(|(&a, &b)| t * a + (1.0 - t) * b).collect() };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if kl_divergence(&mix(mid), base) <= eta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    mix(lo)
}

/// Farthest point `base + t·dir` (with `dir` summing to zero) that stays in
/// the simplex and the KL ball.
fn ray_to_boundary(base: &[f64], dir: &[f64], eta: f64) -> Vec<f64> {
    let t_max = base
        .iter()
        .zip(dir)
        .filter(|(_, &d)| d < 0.0)
        .map(|(&b, &d)| -b / d)
        .fold(f64::INFINITY, f64::min);
    let at = |t: f64| -> Vec<f64> { base.iter().zip(dir).map(|(&b, &d)| (b + t * d).max(0.0)).collect() };
    if !t_max.is_finite() {
        return base.to_vec();
    }
    if kl_divergence(&at(t_max), base) <= eta {
        return at(t_max);
    }
    let (mut lo, mut hi) = (0.0, t_max);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if kl_divergence(&at(mid), base) <= eta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(lo)
}

/// Maximizes `E_P[g]` over `{P : KL(P‖base) ≤ η}` by random search followed
/// by a pattern search over directions out of the base. Returns the incumbent and
/// its objective.
pub fn brute_force_worst_case<R: Rng>(
    base: &[f64],
    g: &[f64],
    eta: f64,
    samples: usize,
    rng: &mut R,
) -> Result<(FeasibleSample, f64)> {
    let n = base.len();
    if n == 0 || n > MAX_SUPPORT || g.len() != n {
        return Err(Error::InvalidArgument(format!(
            "support of size {n} with {} affinities; at most {MAX_SUPPORT} allowed",
            g.len()
        )));
    }
    if !(eta >= 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be non-negative, got {eta}")));
    }
    let objective = |p: &[f64]| dot(p, g);
    let mut best = base.to_vec();
    let mut best_obj = objective(&best);
    if eta == 0.0 {
        return Ok((FeasibleSample::new(best, base), best_obj));
    }

    if n > 1 {
        let dirichlet = Dirichlet::new(&vec![1.0; n]).map_err(|e| Error::Numeric(e.to_string()))?;
        for _ in 0..samples {
            let q = pull_into_ball(dirichlet.sample(rng), base, eta);
            let obj = objective(&q);
            if obj > best_obj {
                best = q;
                best_obj = obj;
            }
        }
    }

    // Pattern search over directions from the base. Every direction is
    // followed to the edge of the ball (or the simplex), so iterates stay
    // feasible and the search never crawls along the curved boundary.
    let mut dir: Vec<f64> = best.iter().zip(base).map(|(p, b)| p - b).collect();
    let mean = dir.iter().sum::<f64>() / n as f64;
    dir.iter_mut().for_each(|x| *x -= mean);
    if dir.iter().all(|&d| d == 0.0) {
        dir[0] = 1.0;
        dir[n - 1] -= 1.0;
    }
    let mut step = 0.5f64;
    let mut passes = 0;
    while step > 1e-13 && passes < 100_000 {
        passes += 1;
        let mut improved = false;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
                let mut d: Vec<f64> = dir.iter().map(|x| x / norm).collect();
                d[i] += step;
                d[j] -= step;
                let mean = d.iter().sum::<f64>() / n as f64;
                d.iter_mut().for_each(|x| *x -= mean);
                let q = ray_to_boundary(base, &d, eta);
                let obj = objective(&q);
                if obj > best_obj {
                    best = q;
                    best_obj = obj;
                    dir = d;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok((FeasibleSample::new(best, base), best_obj))
}

/// `KL(P*_α ‖ base)` for the tilted distribution.
fn tilt_kl(base: &[f64], g: &[f64], alpha: f64) -> Result<f64> {
    Ok(kl_divergence(&worst_case_distribution(base, g, alpha)?, base))
}

/// Inverts the decreasing map `α ↦ KL(P*_α‖base)` by bisection in `ln α`.
pub fn lagrange_alpha_for_eta(base: &[f64], g: &[f64], eta: f64) -> Result<f64> {
    if base.len() != g.len() || base.is_empty() {
        return Err(Error::Shape("base and affinities must have equal, non-zero length".into()));
    }
    let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
    if gmax - gmin <= 1e-15 * gmax.abs().max(1.0) {
        return Err(Error::InvalidArgument(
            "affinities are constant, so every alpha gives KL 0".into(),
        ));
    }
    // As α → 0 the tilt concentrates on the maximizers of g.
    let top_mass: f64 = base.iter().zip(g).filter(|(_, &gv)| gv == gmax).map(|(&b, _)| b).sum();
    let kl_max = -top_mass.ln();
    if !(eta > 0.0 && eta < kl_max) {
        return Err(Error::InvalidArgument(format!(
            "eta must lie in (0, {kl_max}), got {eta}"
        )));
    }
    let (mut lo, mut hi) = (0.0f64, 0.0f64); // bracket in ln α
    while tilt_kl(base, g, lo.exp())? < eta {
        lo -= 1.0;
        if lo < -700.0 {
            return Err(Error::Numeric(format!("eta {eta} unreachable")));
        }
    }
    while tilt_kl(base, g, hi.exp())? > eta {
        hi += 1.0;
        if hi > 700.0 {
            return Err(Error::Numeric(format!("eta {eta} too small to resolve")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if tilt_kl(base, g, mid.exp())? > eta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Central differences of `f` at every coordinate of `x`.
pub fn finite_difference_gradient<F>(mut f: F, x: &EmbeddingTable, step: f64) -> Result<EmbeddingTable>
where
    F: FnMut(&EmbeddingTable) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let mut probe = x.clone();
    let mut grad = EmbeddingTable::zeros(x.rows(), x.dim());
    for k in 0..x.as_slice().len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + step;
        let up = f(&probe)?;
        probe.as_mut_slice()[k] = orig - step;
        let down = f(&probe)?;
        probe.as_mut_slice()[k] = orig;
        grad.as_mut_slice()[k] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}
