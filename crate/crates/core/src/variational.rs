//! Exponentially tilted approximation of the BoN policy.
//!
//! `tilted(y|x) = pi(y|x) exp(lambda Q(x, y)) / Z(x)` with `Q` the win rate of
//! `y` against the base policy and `Z(x) = E_pi[exp(lambda Q)]`. The tilt
//! strength comes either from the scalar `lambda_N` equation or from a direct
//! fit against the exact BoN distribution.

use crate::bon::{bon_dist, win_rates, Benchmark, Scorer, TaskInstance, WinMode};
use crate::error::{domain, BonError, Result};
use crate::numeric::{bisect, golden_section_min, kl_divergence};
use crate::policies::{Policy, Temperature};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaSource {
    RootSolve,
    Calibrated,
    Override,
}

impl LambdaSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LambdaSource::RootSolve => "root-solve",
            LambdaSource::Calibrated => "calibrated",
            LambdaSource::Override => "override",
        }
    }
}

/// A tilt strength together with where it came from. `residual` is the
/// equation residual for root-solve values and the achieved KL for
/// calibrated ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaN {
    pub n: u64,
    pub value: f64,
    pub residual: f64,
    pub source: LambdaSource,
}

impl LambdaN {
    pub fn fixed(n: u64, value: f64) -> Result<Self> {
        if !(value.is_finite() && value >= 0.0) {
            return domain(format!("lambda must be finite and >= 0, got {value}"));
        }
        Ok(LambdaN {
            n,
            value,
            residual: 0.0,
            source: LambdaSource::Override,
        })
    }
}

/// Left-hand side of the `lambda_N` equation, evaluated as printed:
/// `(l - 1) exp(l + 1) / exp(l - 1) - log((exp(l) - 1) / l)`.
pub fn lambda_equation_lhs(lambda: f64) -> f64 {
    let ratio = (lambda + 1.0).exp() / (lambda - 1.0).exp();
    (lambda - 1.0) * ratio - (lambda.exp_m1() / lambda).ln()
}

/// Right-hand side: `log N - (N - 1) / N`.
pub fn lambda_equation_rhs(n: u64) -> f64 {
    let nf = n as f64;
    nf.ln() - (nf - 1.0) / nf
}

const LAMBDA_BRACKET: (f64, f64) = (1e-12, 64.0);
const LAMBDA_RESIDUAL_TOL: f64 = 1e-10;

/// Root of the `lambda_N` equation on `(0, 64]`; `N = 1` maps to zero.
///
/// The printed equation has a root near 1.07 at `N = 1`, while BoN with a
/// single sample is the base policy and needs zero tilt. The definition wins.
pub fn solve_lambda(n: u64) -> Result<LambdaN> {
    if n == 0 {
        return domain("N must be >= 1");
    }
    if n == 1 {
        return Ok(LambdaN {
            n,
            value: 0.0,
            residual: 0.0,
            source: LambdaSource::Override,
        });
    }
    let rhs = lambda_equation_rhs(n);
    let (lo, hi) = LAMBDA_BRACKET;
    let (root, _) = bisect(|l| lambda_equation_lhs(l) - rhs, lo, hi, 1e-13)
        .map_err(|e| BonError::Unsolvable(format!("lambda_N for N = {n}: {e}")))?;
    // independent re-evaluation of the residual
    let residual = (lambda_equation_lhs(root) - rhs).abs();
    if residual > LAMBDA_RESIDUAL_TOL {
        return Err(BonError::Unsolvable(format!(
            "lambda_N for N = {n}: residual {residual:e} at {root} exceeds {LAMBDA_RESIDUAL_TOL:e}"
        )));
    }
    Ok(LambdaN {
        n,
        value: root,
        residual,
        source: LambdaSource::RootSolve,
    })
}

/// Normalised tilt of `probs` by `exp(lambda q)`; returns `(dist, log Z)`.
pub fn tilt(probs: &[f64], q: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let shift = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max) * lambda;
    let mut w: Vec<f64> = probs
        .iter()
        .zip(q)
        .map(|(p, qi)| p * (lambda * qi - shift).exp())
        .collect();
    let z: f64 = w.iter().sum();
    for v in &mut w {
        *v /= z;
    }
    (w, z.ln() + shift)
}

/// `KL(tilted_lambda || exact BoN)` for one context.
pub fn tilt_kl(probs: &[f64], q: &[f64], target: &[f64], lambda: f64) -> f64 {
    kl_divergence(&tilt(probs, q, lambda).0, target)
}

/// Tilted policy over a base policy.
#[derive(Debug, Clone)]
pub struct TiltedPolicy<'a> {
    pub base: &'a Policy,
    pub lambda: LambdaN,
    pub scorer: Scorer,
    pub win_mode: WinMode,
}

impl<'a> TiltedPolicy<'a> {
    pub fn new(base: &'a Policy, lambda: LambdaN, scorer: Scorer, win_mode: WinMode) -> Self {
        TiltedPolicy {
            base,
            lambda,
            scorer,
            win_mode,
        }
    }

    fn win_rates(&self, x: usize, task: &TaskInstance, t: Temperature) -> Result<(Vec<f64>, Vec<f64>)> {
        let probs = self.base.prob_dist(x, t)?;
        let q = win_rates(&probs, &task.scores(self.scorer), self.win_mode);
        Ok((probs, q))
    }

    pub fn dist(&self, x: usize, task: &TaskInstance, t: Temperature) -> Result<Vec<f64>> {
        let (probs, q) = self.win_rates(x, task, t)?;
        Ok(tilt(&probs, &q, self.lambda.value).0)
    }

    /// `(Z, log Z)` with `Z = E_pi[exp(lambda Q)]`.
    pub fn partition(&self, x: usize, task: &TaskInstance, t: Temperature) -> Result<(f64, f64)> {
        let (probs, q) = self.win_rates(x, task, t)?;
        let log_z = tilt(&probs, &q, self.lambda.value).1;
        Ok((log_z.exp(), log_z))
    }
}

pub fn tilted_policy_dist(tp: &TiltedPolicy<'_>, x: usize, task: &TaskInstance, t: Temperature) -> Result<Vec<f64>> {
    tp.dist(x, task, t)
}

pub fn partition_fn(tp: &TiltedPolicy<'_>, x: usize, task: &TaskInstance, t: Temperature) -> Result<(f64, f64)> {
    tp.partition(x, task, t)
}

/// `arg min_{lambda >= 0} KL(tilted_lambda || pi_bon)` on raw vectors.
///
/// A doubling search fixes an upper end, a 64-point scan picks the basin and
/// golden-section search refines inside it.
pub fn calibrate_lambda_probs(probs: &[f64], scores: &[f64], n: u64, win_mode: WinMode) -> LambdaN {
    if n <= 1 {
        return LambdaN {
            n,
            value: 0.0,
            residual: 0.0,
            source: LambdaSource::Calibrated,
        };
    }
    let target = bon_dist(probs, scores, n);
    let q = win_rates(probs, scores, win_mode);
    let kl = |l: f64| tilt_kl(probs, &q, &target, l);

    let mut hi = 1.0;
    while hi < 4096.0 && kl(hi) < kl(hi / 2.0) {
        hi *= 2.0;
    }
    const SCAN: usize = 64;
    let grid: Vec<f64> = (0..=SCAN).map(|i| hi * i as f64 / SCAN as f64).collect();
    let (best, _) = grid
        .iter()
        .enumerate()
        .map(|(i, &l)| (i, kl(l)))
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(SCAN)];
    let (mut value, mut residual) = golden_section_min(kl, a, b, 1e-13);
    for &edge in &[a, b] {
        let v = kl(edge);
        if v < residual {
            value = edge;
            residual = v;
        }
    }
    LambdaN {
        n,
        value,
        residual,
        source: LambdaSource::Calibrated,
    }
}

pub fn calibrate_lambda(
    policy: &Policy,
    x: usize,
    task: &TaskInstance,
    n: u64,
    t: Temperature,
    scorer: Scorer,
) -> Result<LambdaN> {
    if n == 0 {
        return domain("N must be >= 1");
    }
    let probs = policy.prob_dist(x, t)?;
    Ok(calibrate_lambda_probs(&probs, &task.scores(scorer), n, WinMode::Hard))
}

/// Calibrated tilt strength for every context of a benchmark.
pub fn calibrate_benchmark(
    policy: &Policy,
    bench: &Benchmark,
    n: u64,
    t: Temperature,
    scorer: Scorer,
) -> Result<Vec<LambdaN>> {
    bench
        .tasks
        .iter()
        .enumerate()
        .map(|(x, task)| calibrate_lambda(policy, x, task, n, t, scorer))
        .collect()
}

#[derive(Debug, Clone)]
pub struct DistillConfig {
    pub lambda: f64,
    pub scorer: Scorer,
    pub win_mode: WinMode,
    pub t: Temperature,
    pub steps: usize,
    pub lr: f64,
}

/// Result of [`bond_distill`]: the distilled policy and the objective
/// `E_phi[Q_pi] - KL(phi || pi) / lambda` before every step and after the last
/// (`-KL` when `lambda = 0`).
#[derive(Debug, Clone)]
pub struct Distilled {
    pub policy: Policy,
    pub objective: Vec<f64>,
}

/// Distils the tilted BoN policy of a fixed `base` into a new policy by
/// exact gradient ascent on `E_phi[Q_pi] - KL(phi || pi) / lambda`.
///
/// `Q_pi` stays frozen at the base. The ascent runs on the equivalent
/// `lambda E_phi[Q_pi] - KL(phi || pi)`, which keeps the step well scaled as
/// `lambda -> 0`.
pub fn bond_distill(base: &Policy, bench: &Benchmark, cfg: &DistillConfig) -> Result<Distilled> {
    bench.check_policy(base)?;
    if !(cfg.lambda.is_finite() && cfg.lambda >= 0.0) {
        return domain(format!("lambda must be finite and >= 0, got {}", cfg.lambda));
    }
    let mut base_logp = Vec::with_capacity(bench.len());
    let mut win = Vec::with_capacity(bench.len());
    for (x, task) in bench.tasks.iter().enumerate() {
        let probs = base.prob_dist(x, cfg.t)?;
        win.push(win_rates(&probs, &task.scores(cfg.scorer), cfg.win_mode));
        base_logp.push(base.log_prob_dist(x, cfg.t)?);
    }
    let evaluate = |phi: &Policy, grad: Option<&mut Vec<f64>>| -> Result<f64> {
        let mut value = 0.0;
        let mut grad = grad;
        for (x, w) in bench.weights.iter().enumerate() {
            let probs = phi.prob_dist(x, cfg.t)?;
            let logp = phi.log_prob_dist(x, cfg.t)?;
            let mut coeffs = vec![0.0; probs.len()];
            for y in 0..probs.len() {
                let log_ratio = logp[y] - base_logp[x][y];
                let integrand = cfg.lambda * win[x][y] - log_ratio;
                value += w * probs[y] * integrand;
                coeffs[y] = w * probs[y] * integrand;
            }
            if let Some(g) = grad.as_deref_mut() {
                phi.accumulate_score(x, &probs, &coeffs, cfg.t, g);
            }
        }
        Ok(value)
    };
    let report = |scaled: f64| {
        if cfg.lambda > 0.0 {
            scaled / cfg.lambda
        } else {
            scaled
        }
    };
    let mut phi = base.clone();
    let mut objective = Vec::with_capacity(cfg.steps + 1);
    for step in 0..cfg.steps {
        let mut grad = vec![0.0; phi.dim()];
        let value = evaluate(&phi, Some(&mut grad))?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(BonError::Numerical(format!("distillation objective non-finite at step {step}")));
        }
        objective.push(report(value));
        let theta: Vec<f64> = phi
            .theta()
            .iter()
            .zip(&grad)
            .map(|(t, g)| t + cfg.lr * g)
            .collect();
        phi = phi.with_theta(theta)?;
    }
    let last = evaluate(&phi, None)?;
    if !last.is_finite() {
        return Err(BonError::Numerical(format!(
            "distillation objective non-finite at step {}",
            cfg.steps
        )));
    }
    objective.push(report(last));
    Ok(Distilled { policy: phi, objective })
}
