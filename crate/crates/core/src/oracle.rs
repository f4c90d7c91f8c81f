//! Brute-force reference implementations.
//!
//! Nothing here calls into the distribution, win-rate, tilt or estimator
//! code; everything is recomputed from the raw definitions so that the main
//! paths can be checked against it.

use rand::Rng;
use serde::Serialize;

use crate::bon::{Benchmark, Scorer, TaskInstance, TieBreak};
use crate::error::{domain, Result};
use crate::policies::{Policy, Temperature};

/// Largest `m^N` the tuple enumeration accepts.
pub const MAX_TUPLES: u64 = 1_000_000;

fn probs_of(policy: &Policy, x: usize, t: Temperature) -> Result<Vec<f64>> {
    let logits = policy.logits(x)?;
    let t = t.value();
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| ((l - top) / t).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

fn scores_of(task: &TaskInstance, scorer: Scorer) -> Vec<f64> {
    match scorer {
        Scorer::Verifier => task.verifier.clone(),
        Scorer::EnvReward => task.reward.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect(),
    }
}

/// BoN distribution by enumerating every ordered `N`-tuple of draws.
pub fn brute_force_bon_probs(probs: &[f64], scores: &[f64], n: u64, tie: TieBreak) -> Result<Vec<f64>> {
    let m = probs.len() as u64;
    if n == 0 {
        return domain("N must be >= 1");
    }
    let tuples = (n as u32)
        .try_into()
        .ok()
        .and_then(|e: u32| m.checked_pow(e))
        .filter(|&c| c <= MAX_TUPLES);
    let Some(tuples) = tuples else {
        return domain(format!(
            "brute-force enumeration needs m^N <= {MAX_TUPLES}, got m = {m}, N = {n}"
        ));
    };
    let n = n as usize;
    let mut out = vec![0.0; probs.len()];
    let mut tuple = vec![0usize; n];
    for code in 0..tuples {
        let mut c = code;
        for slot in tuple.iter_mut() {
            *slot = (c % m) as usize;
            c /= m;
        }
        let mass: f64 = tuple.iter().map(|&y| probs[y]).product();
        if mass == 0.0 {
            continue;
        }
        let best = tuple.iter().map(|&y| scores[y]).fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<usize> = tuple.iter().copied().filter(|&y| scores[y] == best).collect();
        match tie {
            TieBreak::FirstSample => out[winners[0]] += mass,
            TieBreak::UniformAmongMax => {
                let share = mass / winners.len() as f64;
                for y in winners {
                    out[y] += share;
                }
            }
        }
    }
    Ok(out)
}

pub fn brute_force_bon_dist(
    policy: &Policy,
    x: usize,
    task: &TaskInstance,
    n: u64,
    t: Temperature,
    scorer: Scorer,
    tie: TieBreak,
) -> Result<Vec<f64>> {
    brute_force_bon_probs(&probs_of(policy, x, t)?, &scores_of(task, scorer), n, tie)
}

// ---------------------------------------------------------------------------
// Finite differences

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffSpec {
    pub h: f64,
    /// When set, only the derivative along this direction is taken.
    pub direction: Option<Vec<f64>>,
}

impl Default for FiniteDiffSpec {
    fn default() -> Self {
        FiniteDiffSpec {
            h: 1e-5,
            direction: None,
        }
    }
}

/// Central differences. Per coordinate unless `spec.direction` is set, in
/// which case the single directional derivative is returned.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(mut f: F, theta: &[f64], spec: &FiniteDiffSpec) -> Result<Vec<f64>> {
    if !(spec.h > 0.0 && spec.h.is_finite()) {
        return domain(format!("step h must be positive, got {}", spec.h));
    }
    let h = spec.h;
    if let Some(dir) = &spec.direction {
        if dir.len() != theta.len() {
            return domain("direction length differs from theta");
        }
        let plus: Vec<f64> = theta.iter().zip(dir).map(|(t, d)| t + h * d).collect();
        let minus: Vec<f64> = theta.iter().zip(dir).map(|(t, d)| t - h * d).collect();
        return Ok(vec![(f(&plus) - f(&minus)) / (2.0 * h)]);
    }
    let mut work = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        work[i] = theta[i] + h;
        let fp = f(&work);
        work[i] = theta[i] - h;
        let fm = f(&work);
        work[i] = theta[i];
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

/// `max_i |a_i - b_i| / max(max_i |b_i|, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = b.iter().fold(floor, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max) / scale
}

// ---------------------------------------------------------------------------
// Monte Carlo comparison

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McComparison {
    pub tv: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Empirical TV distance between `n` draws of `sampler` and `exact`,
/// checked against `sum_y 2 sqrt(p_y (1 - p_y) / n)`, i.e. half the sum of
/// per-outcome 4-sigma deviations.
pub fn mc_compare<R: Rng + ?Sized, S: FnMut(&mut R) -> usize>(
    exact: &[f64],
    mut sampler: S,
    n: usize,
    rng: &mut R,
) -> Result<McComparison> {
    if n == 0 {
        return domain("need at least one sample");
    }
    let mut counts = vec![0usize; exact.len()];
    let mut stray = 0usize;
    for _ in 0..n {
        let y = sampler(rng);
        match counts.get_mut(y) {
            Some(c) => *c += 1,
            None => stray += 1,
        }
    }
    let nf = n as f64;
    let tv = 0.5
        * (counts
            .iter()
            .zip(exact)
            .map(|(&c, &p)| (c as f64 / nf - p).abs())
            .sum::<f64>()
            + stray as f64 / nf);
    let bound = 0.5 * exact.iter().map(|p| 4.0 * (p * (1.0 - p) / nf).sqrt()).sum::<f64>();
    Ok(McComparison {
        tv,
        bound,
        pass: tv <= bound,
    })
}

// ---------------------------------------------------------------------------
// Objectives, coded from their definitions

/// `sum_x P(x) (1 - P_fail(x)^N)`.
pub fn pass_objective(policy: &Policy, bench: &Benchmark, n: u64, t: Temperature) -> Result<f64> {
    let mut total = 0.0;
    for (x, (task, w)) in bench.tasks.iter().zip(&bench.weights).enumerate() {
        let probs = probs_of(policy, x, t)?;
        let fail: f64 = probs.iter().zip(&task.reward).filter(|(_, &r)| !r).map(|(p, _)| p).sum();
        total += w * (1.0 - fail.powi(n as i32));
    }
    Ok(total)
}

/// `sum_x P(x) E_{y ~ pi}[reward]` with env reward or verifier score.
pub fn expected_reward_objective(policy: &Policy, bench: &Benchmark, t: Temperature, scorer: Scorer) -> Result<f64> {
    let mut total = 0.0;
    for (x, (task, w)) in bench.tasks.iter().zip(&bench.weights).enumerate() {
        let probs = probs_of(policy, x, t)?;
        total += w * probs.iter().zip(scores_of(task, scorer)).map(|(p, r)| p * r).sum::<f64>();
    }
    Ok(total)
}

fn win_rate_from_defn(probs: &[f64], scores: &[f64], y: usize, soft: bool) -> f64 {
    (0..probs.len())
        .map(|o| {
            let k = if soft {
                1.0 / (1.0 + (scores[o] - scores[y]).exp())
            } else if scores[y] >= scores[o] {
                1.0
            } else {
                0.0
            };
            probs[o] * k
        })
        .sum()
}

fn tilted_from_defn(probs: &[f64], scores: &[f64], lambda: f64, soft: bool) -> (Vec<f64>, Vec<f64>, f64) {
    let q: Vec<f64> = (0..probs.len()).map(|y| win_rate_from_defn(probs, scores, y, soft)).collect();
    let un: Vec<f64> = probs.iter().zip(&q).map(|(p, qy)| p * (lambda * qy).exp()).collect();
    let z: f64 = un.iter().sum();
    (un.into_iter().map(|u| u / z).collect(), q, z)
}

/// `sum_x P(x) E_{y ~ pi exp(lambda_x Q) / Z}[R]`, hard win rate, `lambda`
/// held fixed.
pub fn tilted_reward_objective(
    policy: &Policy,
    bench: &Benchmark,
    lambda: &[f64],
    t: Temperature,
    scorer: Scorer,
) -> Result<f64> {
    let mut total = 0.0;
    for (x, (task, w)) in bench.tasks.iter().zip(&bench.weights).enumerate() {
        let probs = probs_of(policy, x, t)?;
        let (dist, _, _) = tilted_from_defn(&probs, &scores_of(task, scorer), lambda[x], false);
        total += w * dist.iter().zip(&task.reward).filter(|(_, &r)| r).map(|(d, _)| d).sum::<f64>();
    }
    Ok(total)
}

/// `sum_i w_i [log pi(y_i|x_i) + lambda Q(x_i, y_i) - log Z(x_i)] / sum_i w_i`
/// over `(x, y, w)` items, with the soft or hard win rate.
pub fn sft_objective(
    policy: &Policy,
    bench: &Benchmark,
    items: &[(usize, usize, f64)],
    lambda: &[f64],
    t: Temperature,
    scorer: Scorer,
    soft: bool,
) -> Result<f64> {
    let total_w: f64 = items.iter().map(|i| i.2).sum();
    let mut total = 0.0;
    for &(x, y, w) in items {
        let probs = probs_of(policy, x, t)?;
        let scores = scores_of(&bench.tasks[x], scorer);
        let (_, q, z) = tilted_from_defn(&probs, &scores, lambda[x], soft);
        total += w * (probs[y].ln() + lambda[x] * q[y] - z.ln());
    }
    Ok(total / total_w)
}

/// `sum_x P(x) KL(pi(.|x) || anchor(.|x))`.
pub fn kl_objective(policy: &Policy, anchor: &Policy, bench: &Benchmark, t: Temperature) -> Result<f64> {
    let mut total = 0.0;
    for (x, w) in bench.weights.iter().enumerate() {
        let p = probs_of(policy, x, t)?;
        let a = probs_of(anchor, x, t)?;
        total += w * p
            .iter()
            .zip(&a)
            .filter(|(pi, _)| **pi > 0.0)
            .map(|(pi, ai)| pi * (pi / ai).ln())
            .sum::<f64>();
    }
    Ok(total)
}

/// One line of the oracle report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRecord {
    pub check: String,
    pub instance_seed: u64,
    pub metric: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl OracleRecord {
    /// A record that passes when `value <= bound`.
    pub fn at_most(check: &str, instance_seed: u64, metric: &str, value: f64, bound: f64) -> Self {
        OracleRecord {
            check: check.to_string(),
            instance_seed,
            metric: metric.to_string(),
            value,
            bound,
            pass: value <= bound,
        }
    }
}
