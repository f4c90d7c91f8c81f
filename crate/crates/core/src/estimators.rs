//! BoN-aware policy-gradient estimators.
//!
//! Every estimator has two modes. Exact mode sums over the finite answer
//! set, so it is deterministic and can be checked against finite
//! differences. Sampled mode follows the mini-batch procedures (B contexts
//! drawn from the prompt distribution, `N` candidates per context) and is
//! unbiased for the exact gradient whenever the failure probabilities and
//! baselines it is given are exact.
//!
//! Exact mode writes every gradient as `sum_x sum_y c_x(y) grad log pi(y|x)`
//! and hands the coefficient vector to [`Policy::accumulate_score`].

use rand::Rng;

use crate::bon::{
    binary_bon_dist, bon_dist, bon_sample_with_candidates, win_rates, BonSpec, Benchmark, Scorer,
    WinMode,
};
use crate::error::{domain, BonError, Result};
use crate::numeric::{one_minus_pow, sigmoid};
use crate::policies::{Categorical, Policy, Temperature};
use crate::variational::tilt;

/// Default `P_fail` clipping range.
pub const DEFAULT_PFAIL_CLIP: (f64, f64) = (0.01, 0.99);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMode {
    ExactExpectation,
    Sampled { batch: usize },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub mean_reward: f64,
    pub baselines: Vec<f64>,
    pub baseline_mse: f64,
    /// Weight evaluations whose `P_fail` was moved by clipping.
    pub clipped_count: usize,
    /// Sampled contexts whose BoN pick was incorrect (positive-only
    /// estimators drop them).
    pub zero_positive_tasks: usize,
    /// Sampled mode: `(context, reward)` of every scored sample, for
    /// baseline updates.
    pub observations: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub grad: Vec<f64>,
    pub estimator: &'static str,
    pub mode: EstimateMode,
    pub diagnostics: Diagnostics,
}

impl GradEstimate {
    pub fn norm(&self) -> f64 {
        crate::numeric::norm2(&self.grad)
    }
}

fn check_finite(grad: &[f64], estimator: &str, task: Option<u64>) -> Result<()> {
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        let at = task.map(|t| format!(" (task {t})")).unwrap_or_default();
        return Err(BonError::Numerical(format!(
            "{estimator}: non-finite gradient entry {i}{at}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Weights

fn check_p(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        domain(format!("P_fail must lie in [0, 1], got {p}"))
    }
}

/// `g+_N(p) = N p^(N-1) / (1 - p^N)`; infinite at `p = 1`.
pub fn g_plus(n: u64, p: f64) -> Result<f64> {
    check_p(p)?;
    let nf = n as f64;
    if p >= 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(nf * p.powf(nf - 1.0) / one_minus_pow(p, nf))
}

/// `g-(p) = N p / (1 - p)`; infinite at `p = 1`.
pub fn g_minus(n: u64, p: f64) -> Result<f64> {
    check_p(p)?;
    if p >= 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(n as f64 * p / (1.0 - p))
}

/// `g+bar_N(p) = g+_N(p) (1 - p)`, with its limit 1 at `p = 1`.
pub fn g_plus_bar(n: u64, p: f64) -> Result<f64> {
    check_p(p)?;
    if p >= 1.0 {
        return Ok(1.0);
    }
    Ok(g_plus(n, p)? * (1.0 - p))
}

/// The BoN-RLB weight family at a fixed `N`, with `P_fail` clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BonWeights {
    pub n: u64,
    pub clip: (f64, f64),
}

impl BonWeights {
    pub fn new(n: u64) -> Self {
        BonWeights {
            n,
            clip: DEFAULT_PFAIL_CLIP,
        }
    }

    pub fn unclipped(n: u64) -> Self {
        BonWeights { n, clip: (0.0, 1.0) }
    }

    pub fn with_clip(n: u64, lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return domain(format!("clip range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"));
        }
        Ok(BonWeights { n, clip: (lo, hi) })
    }

    /// Clipped `p` and whether clipping changed it.
    pub fn clip_p(&self, p: f64) -> Result<(f64, bool)> {
        check_p(p)?;
        let c = p.clamp(self.clip.0, self.clip.1);
        Ok((c, c != p))
    }

    pub fn g_plus(&self, p: f64) -> Result<f64> {
        g_plus(self.n, self.clip_p(p)?.0)
    }

    pub fn g_minus(&self, p: f64) -> Result<f64> {
        g_minus(self.n, self.clip_p(p)?.0)
    }

    pub fn g_plus_bar(&self, p: f64) -> Result<f64> {
        g_plus_bar(self.n, self.clip_p(p)?.0)
    }
}

// ---------------------------------------------------------------------------
// Baselines

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    ExactEnumeration,
    LearnedTable { lr: f64 },
}

/// Per-context baseline `b(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTable {
    pub values: Vec<f64>,
    pub kind: BaselineKind,
}

impl BaselineTable {
    /// `b(x) = E_{y ~ pi_bon}[R(x, y)]` computed exactly.
    pub fn exact(policy: &Policy, bench: &Benchmark, spec: &BonSpec) -> Result<Self> {
        bench.check_policy(policy)?;
        let values = bench
            .tasks
            .iter()
            .enumerate()
            .map(|(x, task)| {
                let probs = policy.prob_dist(x, spec.t)?;
                Ok(crate::bon::bon_accuracy(&probs, task, spec))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(BaselineTable {
            values,
            kind: BaselineKind::ExactEnumeration,
        })
    }

    pub fn learned(num_contexts: usize, init: f64, lr: f64) -> Self {
        BaselineTable {
            values: vec![init; num_contexts],
            kind: BaselineKind::LearnedTable { lr },
        }
    }

    pub fn zeros(num_contexts: usize) -> Self {
        Self::learned(num_contexts, 0.0, 0.0)
    }

    /// Same kind, every value moved by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        BaselineTable {
            values: self.values.iter().map(|v| v + c).collect(),
            kind: self.kind,
        }
    }

    pub fn get(&self, x: usize) -> f64 {
        self.values[x]
    }
}

/// One value step.
///
/// A learned table moves each observed context toward its batch-mean reward
/// by a squared-loss gradient step; an exact table is recomputed from the
/// BoN distribution (`exact` must then be supplied).
pub fn update_baseline(
    table: &BaselineTable,
    observations: &[(usize, f64)],
    exact: Option<(&Policy, &Benchmark, &BonSpec)>,
) -> Result<BaselineTable> {
    match table.kind {
        BaselineKind::ExactEnumeration => {
            let (policy, bench, spec) = exact.ok_or_else(|| {
                BonError::Domain("exact baseline update needs policy, benchmark and spec".into())
            })?;
            BaselineTable::exact(policy, bench, spec)
        }
        BaselineKind::LearnedTable { lr } => {
            let mut sums = vec![0.0; table.values.len()];
            let mut counts = vec![0usize; table.values.len()];
            for &(x, r) in observations {
                if x >= sums.len() {
                    return domain(format!("observation for context {x} out of range"));
                }
                sums[x] += r;
                counts[x] += 1;
            }
            let values = table
                .values
                .iter()
                .enumerate()
                .map(|(x, &b)| {
                    if counts[x] == 0 {
                        b
                    } else {
                        let target = sums[x] / counts[x] as f64;
                        b + lr * (target - b)
                    }
                })
                .collect();
            Ok(BaselineTable {
                values,
                kind: table.kind,
            })
        }
    }
}

/// Batch advantage normalisation to mean 0 and standard deviation 1. Leaves
/// constant or single-element batches centred only.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a -= mean;
        if std > 0.0 {
            *a /= std;
        }
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing

/// Tilt strength per context.
#[derive(Debug, Clone, PartialEq)]
pub enum Lambda {
    Shared(f64),
    PerTask(Vec<f64>),
}

impl Lambda {
    pub fn get(&self, x: usize) -> f64 {
        match self {
            Lambda::Shared(v) => *v,
            Lambda::PerTask(v) => v[x],
        }
    }

    fn validate(&self, contexts: usize) -> Result<()> {
        let ok = match self {
            Lambda::Shared(v) => v.is_finite(),
            Lambda::PerTask(v) => v.len() == contexts && v.iter().all(|l| l.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            domain("lambda must be finite with one value per context")
        }
    }
}

/// Distribution the BoN pick is taken to follow in exact mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionModel {
    /// `pi exp(lambda Q) / Z`, the variational form the gradient derivations
    /// are exact for.
    Tilted,
    /// Order-statistics BoN distribution, which sampled mode draws from.
    ExactBon,
}

/// Sampled-mode knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    /// Contexts per batch.
    pub batch: usize,
    /// Draws per context for estimators without a BoN step.
    pub samples_per_context: usize,
    pub normalize_advantages: bool,
}

impl SampleConfig {
    pub fn new(batch: usize) -> Self {
        SampleConfig {
            batch,
            samples_per_context: 1,
            normalize_advantages: false,
        }
    }

    fn check(&self) -> Result<()> {
        if self.batch == 0 || self.samples_per_context == 0 {
            return domain("sampled mode needs batch >= 1 and samples_per_context >= 1");
        }
        Ok(())
    }
}

fn draw_contexts<R: Rng + ?Sized>(bench: &Benchmark, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
    let sampler = Categorical::new(&bench.weights)?;
    Ok((0..batch).map(|_| sampler.draw(rng)).collect())
}

/// Per-context probabilities, cached for one gradient evaluation.
fn all_probs(policy: &Policy, bench: &Benchmark, t: Temperature) -> Result<Vec<Vec<f64>>> {
    bench.check_policy(policy)?;
    (0..bench.len()).map(|x| policy.prob_dist(x, t)).collect()
}

/// Comparison kernel inside `grad f`: `sigmoid` for soft, and for hard the
/// two forms that differ by a constant (and hence agree after the score
/// identity) are `1{r(y) >= r(y')}` and `-1{r(y) < r(y')}`.
fn compare_kernel(mode: WinMode, strict_kernel: bool, sy: f64, so: f64) -> f64 {
    match mode {
        WinMode::Soft => sigmoid(sy - so),
        WinMode::Hard if strict_kernel => {
            if sy < so {
                -1.0
            } else {
                0.0
            }
        }
        WinMode::Hard => {
            if sy >= so {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Adds `lambda * sum_y u_y E_{y'~pi}[k(y, y') grad log pi(y')]` to `coeffs`,
/// i.e. the inner-expectation part of `sum_y u_y grad f(y)`.
fn add_comparison_term(
    coeffs: &mut [f64],
    u: &[f64],
    probs: &[f64],
    scores: &[f64],
    lambda: f64,
    mode: WinMode,
    strict_kernel: bool,
) {
    if lambda == 0.0 {
        return;
    }
    for (yp, c) in coeffs.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (y, &uy) in u.iter().enumerate() {
            if uy != 0.0 {
                acc += uy * compare_kernel(mode, strict_kernel, scores[y], scores[yp]);
            }
        }
        *c += lambda * probs[yp] * acc;
    }
}

fn selection_dist(
    probs: &[f64],
    scores: &[f64],
    n: u64,
    lambda: f64,
    mode: WinMode,
    model: SelectionModel,
) -> Vec<f64> {
    match model {
        SelectionModel::Tilted => tilt(probs, &win_rates(probs, scores, mode), lambda).0,
        SelectionModel::ExactBon => bon_dist(probs, scores, n),
    }
}

// ---------------------------------------------------------------------------
// BoN-SFT

/// One expert demonstration with its weight in the empirical data
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertItem {
    pub x: usize,
    pub y: usize,
    pub weight: f64,
}

/// Every `(x, y)` with positive expert mass, weighted by `P(x) pi*(y|x)`.
pub fn expert_dataset(bench: &Benchmark) -> Vec<ExpertItem> {
    let mut out = Vec::new();
    for (x, (task, w)) in bench.tasks.iter().zip(&bench.weights).enumerate() {
        for (y, &e) in task.expert.iter().enumerate() {
            if e > 0.0 && *w > 0.0 {
                out.push(ExpertItem { x, y, weight: w * e });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BonSftConfig {
    pub spec: BonSpec,
    pub lambda: Lambda,
    pub win_mode: WinMode,
    pub selection: SelectionModel,
}

/// Gradient of `E_D[log pi(y|x) + lambda Q(x, y) - log Z(x)]`:
/// `E_D[grad f(x, y)] - E_{x~D, y~pi_bon}[grad f(x, y)]` with
/// `grad f = grad log pi(y) + lambda E_{y'~pi}[grad log pi(y') k(r(y), r(y'))]`.
pub fn grad_bon_sft<R: Rng + ?Sized>(
    policy: &Policy,
    bench: &Benchmark,
    dataset: &[ExpertItem],
    cfg: &BonSftConfig,
    mode: EstimateMode,
    rng: &mut R,
) -> Result<GradEstimate> {
    const NAME: &str = "bon-sft";
    if dataset.is_empty() {
        return domain("BoN-SFT needs a non-empty dataset");
    }
    cfg.lambda.validate(bench.len())?;
    let t = cfg.spec.t;
    let probs = all_probs(policy, bench, t)?;
    let total_w: f64 = dataset.iter().map(|d| d.weight).sum();
    if !(total_w > 0.0) {
        return domain("dataset weights must have positive total");
    }
    for d in dataset {
        if d.x >= bench.len() || d.y >= policy.answers() {
            return domain(format!("dataset item ({}, {}) out of range", d.x, d.y));
        }
    }
    let mut grad = vec![0.0; policy.dim()];
    let mut diagnostics = Diagnostics::default();

    match mode {
        EstimateMode::ExactExpectation => {
            let m = policy.answers();
            let mut per_ctx: Vec<Option<Vec<f64>>> = vec![None; bench.len()];
            for d in dataset {
                per_ctx[d.x].get_or_insert_with(|| vec![0.0; m])[d.y] += d.weight / total_w;
            }
            for (x, data) in per_ctx.into_iter().enumerate() {
                let Some(data) = data else { continue };
                let task = &bench.tasks[x];
                let scores = task.scores(cfg.spec.scorer);
                let lambda = cfg.lambda.get(x);
                let rho = selection_dist(&probs[x], &scores, cfg.spec.n, lambda, cfg.win_mode, cfg.selection);
                let wx: f64 = data.iter().sum();
                let u: Vec<f64> = data.iter().zip(&rho).map(|(d, r)| d - wx * r).collect();
                let mut coeffs = u.clone();
                add_comparison_term(&mut coeffs, &u, &probs[x], &scores, lambda, cfg.win_mode, false);
                policy.accumulate_score(x, &probs[x], &coeffs, t, &mut grad);
                check_finite(&grad, NAME, Some(task.id))?;
            }
        }
        EstimateMode::Sampled { batch } => {
            if batch == 0 {
                return domain("batch must be >= 1");
            }
            let weights: Vec<f64> = dataset.iter().map(|d| d.weight).collect();
            let pick = Categorical::new(&weights)?;
            let k = cfg.spec.n as usize;
            let mut reward_sum = 0.0;
            for _ in 0..batch {
                let d = dataset[pick.draw(rng)];
                let task = &bench.tasks[d.x];
                let scores = task.scores(cfg.spec.scorer);
                let sampler = Categorical::new(&probs[d.x])?;
                let (best, _) = bon_sample_with_candidates(&sampler, &scores, &cfg.spec, rng);
                reward_sum += task.reward_value(best);
                let lambda = cfg.lambda.get(d.x);
                let mut coeffs = vec![0.0; policy.answers()];
                coeffs[d.y] += 1.0;
                coeffs[best] -= 1.0;
                if lambda != 0.0 {
                    for _ in 0..k {
                        let yp = sampler.draw(rng);
                        let diff = compare_kernel(cfg.win_mode, false, scores[d.y], scores[yp])
                            - compare_kernel(cfg.win_mode, false, scores[best], scores[yp]);
                        coeffs[yp] += lambda * diff / k as f64;
                    }
                }
                for c in &mut coeffs {
                    *c /= batch as f64;
                }
                policy.accumulate_score(d.x, &probs[d.x], &coeffs, t, &mut grad);
            }
            check_finite(&grad, NAME, None)?;
            diagnostics.mean_reward = reward_sum / batch as f64;
        }
    }
    Ok(GradEstimate {
        grad,
        estimator: NAME,
        mode,
        diagnostics,
    })
}

// ---------------------------------------------------------------------------
// BoN-RL

#[derive(Debug, Clone, PartialEq)]
pub struct BonRlConfig {
    pub spec: BonSpec,
    pub lambda: Lambda,
    pub win_mode: WinMode,
    pub selection: SelectionModel,
    /// Sampled mode: draw fresh comparison answers `y'` instead of reusing
    /// the `N` candidates.
    pub fresh_comparisons: bool,
    /// Reward multiplying the score terms; selection always uses
    /// `spec.scorer`.
    pub reward: RewardSignal,
    /// Exact mode: centre `R - b` under the selection distribution. Off
    /// gives the two-term form term by term.
    pub centred: bool,
}

/// `E_{y~pi_bon}[grad log pi(y) (R - b)] - lambda E_{y~pi_bon, y'~pi}[grad log
/// pi(y') 1{r(y) < r(y')} (R - b)]`.
///
/// With `centred` set, exact mode multiplies `R - b` by the score of the
/// selection distribution itself, `grad f(y) - E_rho[grad f]`. That is the
/// same expression whenever `b` is the exact BoN baseline, and for any other
/// baseline it stays the exact gradient of `E_rho[R]`.
pub fn grad_bon_rl<R: Rng + ?Sized>(
    policy: &Policy,
    bench: &Benchmark,
    cfg: &BonRlConfig,
    baseline: &BaselineTable,
    mode: EstimateMode,
    sample: &SampleConfig,
    rng: &mut R,
) -> Result<GradEstimate> {
    const NAME: &str = "bon-rl";
    cfg.lambda.validate(bench.len())?;
    if baseline.values.len() != bench.len() {
        return domain("baseline table needs one value per context");
    }
    let t = cfg.spec.t;
    let probs = all_probs(policy, bench, t)?;
    let mut grad = vec![0.0; policy.dim()];
    let mut diagnostics = Diagnostics {
        baselines: baseline.values.clone(),
        ..Diagnostics::default()
    };
    match mode {
        EstimateMode::ExactExpectation => {
            for (x, (task, w)) in bench.tasks.iter().zip(&bench.weights).enumerate() {
                let scores = task.scores(cfg.spec.scorer);
                let lambda = cfg.lambda.get(x);
                let rho = selection_dist(&probs[x], &scores, cfg.spec.n, lambda, cfg.win_mode, cfg.selection);
                let b = baseline.get(x);
                let rewards = reward_vector(task, cfg.reward);
                let adv: Vec<f64> = rewards.iter().map(|r| r - b).collect();
                let mean_adv: f64 = if cfg.centred {
                    rho.iter().zip(&adv).map(|(r, a)| r * a).sum()
                } else {
                    0.0
                };
                let u: Vec<f64> = rho
                    .iter()
                    .zip(&adv)
                    .map(|(r, a)| w * r * (a - mean_adv))
                    .collect();
                let mut coeffs = u.clone();
                add_comparison_term(&mut coeffs, &u, &probs[x], &scores, lambda, cfg.win_mode, true);
                policy.accumulate_score(x, &probs[x], &coeffs, t, &mut grad);
                check_finite(&grad, NAME, Some(task.id))?;
                let expected_r: f64 = rho.iter().zip(&rewards).map(|(r, v)| r * v).sum();
                diagnostics.mean_reward += w * expected_r;
                diagnostics.baseline_mse += w * rho.iter().zip(&adv).map(|(r, a)| r * a * a).sum::<f64>();
            }
        }
        EstimateMode::Sampled { batch } => {
            sample.check()?;
            let contexts = draw_contexts(bench, batch, rng)?;
            let k = cfg.spec.n as usize;
            struct Item {
                x: usize,
                best: usize,
                comparisons: Vec<usize>,
                adv: f64,
            }
            let mut items = Vec::with_capacity(batch);
            for &x in &contexts {
                let task = &bench.tasks[x];
                let scores = task.scores(cfg.spec.scorer);
                let sampler = Categorical::new(&probs[x])?;
                let (best, candidates) = bon_sample_with_candidates(&sampler, &scores, &cfg.spec, rng);
                let comparisons = if cfg.fresh_comparisons {
                    (0..k).map(|_| sampler.draw(rng)).collect()
                } else {
                    candidates
                };
                let r = reward_vector(task, cfg.reward)[best];
                diagnostics.mean_reward += r / batch as f64;
                diagnostics.observations.push((x, r));
                let adv = r - baseline.get(x);
                diagnostics.baseline_mse += adv * adv / batch as f64;
                items.push(Item {
                    x,
                    best,
                    comparisons,
                    adv,
                });
            }
            if sample.normalize_advantages {
                let mut adv: Vec<f64> = items.iter().map(|i| i.adv).collect();
                normalize_advantages(&mut adv);
                for (i, a) in items.iter_mut().zip(adv) {
                    i.adv = a;
                }
            }
            for item in &items {
                let scores = bench.tasks[item.x].scores(cfg.spec.scorer);
                let lambda = cfg.lambda.get(item.x);
                let scale = item.adv / batch as f64;
                let mut coeffs = vec![0.0; policy.answers()];
                coeffs[item.best] += scale;
                if lambda != 0.0 {
                    let kk = item.comparisons.len() as f64;
                    for &yp in &item.comparisons {
                        coeffs[yp] += scale * lambda
                            * compare_kernel(cfg.win_mode, true, scores[item.best], scores[yp])
                            / kk;
                    }
                }
                policy.accumulate_score(item.x, &probs[item.x], &coeffs, t, &mut grad);
            }
            check_finite(&grad, NAME, None)?;
        }
    }
    Ok(GradEstimate {
        grad,
        estimator: NAME,
        mode,
        diagnostics,
    })
}

// ---------------------------------------------------------------------------
// BoN-RLB and BoN-RLB(P)

/// Where sampled mode gets `P_fail(x)` from. Exact mode always uses the
/// exact value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PFailSource {
    Exact,
    BatchEstimate,
}

fn check_binary_weights(weights: &BonWeights, n: u64) -> Result<()> {
    if weights.n != n {
        return domain(format!("weights built for N = {} used with N = {n}", weights.n));
    }
    if n == 0 {
        return domain("N must be >= 1");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn grad_binary<R: Rng + ?Sized>(
    name: &'static str,
    positive_only: bool,
    policy: &Policy,
    bench: &Benchmark,
    n: u64,
    t: Temperature,
    pfail_source: PFailSource,
    weights: &BonWeights,
    mode: EstimateMode,
    rng: &mut R,
) -> Result<GradEstimate> {
    check_binary_weights(weights, n)?;
    let probs = all_probs(policy, bench, t)?;
    let mut grad = vec![0.0; policy.dim()];
    let mut diagnostics = Diagnostics::default();

    let weight_pair = |task_id: u64, p: f64, diag: &mut Diagnostics| -> Result<(f64, f64)> {
        let (pc, clipped) = weights.clip_p(p)?;
        if clipped {
            diag.clipped_count += 1;
        }
        if positive_only {
            return Ok((g_plus_bar(n, pc)?, 0.0));
        }
        if pc >= 1.0 {
            return Err(BonError::Domain(format!(
                "{name}: task {task_id} has P_fail = 1 and no clipping; weights are unbounded"
            )));
        }
        Ok((g_plus(n, pc)?, g_minus(n, pc)?))
    };

    match mode {
        EstimateMode::ExactExpectation => {
            for (x, (task, w)) in bench.tasks.iter().zip(&bench.weights).enumerate() {
                let p = task.p_fail(&probs[x]).clamp(0.0, 1.0);
                if positive_only && p >= 1.0 {
                    continue;
                }
                let (gp, gm) = weight_pair(task.id, p, &mut diagnostics)?;
                let dist = binary_bon_dist(&probs[x], &task.reward, n);
                let coeffs: Vec<f64> = dist
                    .iter()
                    .zip(&task.reward)
                    .map(|(d, &r)| w * d * if r { gp } else { gm })
                    .collect();
                policy.accumulate_score(x, &probs[x], &coeffs, t, &mut grad);
                check_finite(&grad, name, Some(task.id))?;
                diagnostics.mean_reward += w * crate::bon::pass_at_n(p, n);
            }
        }
        EstimateMode::Sampled { batch } => {
            if batch == 0 {
                return domain("batch must be >= 1");
            }
            let contexts = draw_contexts(bench, batch, rng)?;
            let spec = BonSpec::new(n, t, Scorer::EnvReward)?;
            for &x in &contexts {
                let task = &bench.tasks[x];
                let rewards = task.rewards();
                let sampler = Categorical::new(&probs[x])?;
                let (best, candidates) = bon_sample_with_candidates(&sampler, &rewards, &spec, rng);
                let p = match pfail_source {
                    PFailSource::Exact => task.p_fail(&probs[x]).clamp(0.0, 1.0),
                    PFailSource::BatchEstimate => {
                        candidates.iter().filter(|&&y| !task.reward[y]).count() as f64
                            / candidates.len() as f64
                    }
                };
                let correct = task.reward[best];
                diagnostics.mean_reward += rewards[best] / batch as f64;
                if positive_only && !correct {
                    diagnostics.zero_positive_tasks += 1;
                    continue;
                }
                let (gp, gm) = weight_pair(task.id, p, &mut diagnostics)?;
                let mut coeffs = vec![0.0; policy.answers()];
                coeffs[best] = if correct { gp } else { gm } / batch as f64;
                policy.accumulate_score(x, &probs[x], &coeffs, t, &mut grad);
            }
            check_finite(&grad, name, None)?;
        }
    }
    Ok(GradEstimate {
        grad,
        estimator: name,
        mode,
        diagnostics,
    })
}

/// `E_x[E_{pi_bon, R=1}[grad log pi] g+_N(P_fail) + E_{pi_bon, R=0}[grad log pi] g-(P_fail)]`,
/// where the inner expectations are restricted sums over the BoN
/// distribution.
#[allow(clippy::too_many_arguments)]
pub fn grad_bon_rlb<R: Rng + ?Sized>(
    policy: &Policy,
    bench: &Benchmark,
    n: u64,
    t: Temperature,
    pfail_source: PFailSource,
    weights: &BonWeights,
    mode: EstimateMode,
    rng: &mut R,
) -> Result<GradEstimate> {
    grad_binary("bon-rlb", false, policy, bench, n, t, pfail_source, weights, mode, rng)
}

/// Positive-only form: `E_x[E_{pi_bon, R=1}[grad log pi] g+bar_N(P_fail)]`.
#[allow(clippy::too_many_arguments)]
pub fn grad_bon_rlb_p<R: Rng + ?Sized>(
    policy: &Policy,
    bench: &Benchmark,
    n: u64,
    t: Temperature,
    pfail_source: PFailSource,
    weights: &BonWeights,
    mode: EstimateMode,
    rng: &mut R,
) -> Result<GradEstimate> {
    grad_binary("bon-rlb-p", true, policy, bench, n, t, pfail_source, weights, mode, rng)
}

// ---------------------------------------------------------------------------
// Reward-weighted and supervised baselines

/// Which signal a plain policy-gradient run maximises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardSignal {
    Env,
    Verifier,
}

fn reward_vector(task: &crate::bon::TaskInstance, signal: RewardSignal) -> Vec<f64> {
    match signal {
        RewardSignal::Env => task.rewards(),
        RewardSignal::Verifier => task.verifier.clone(),
    }
}

/// BoN-STaR: `E_{x, y~pi_bon}[grad log pi(y|x) R(x, y)]`.
pub fn grad_star<R: Rng + ?Sized>(
    policy: &Policy,
    bench: &Benchmark,
    spec: &BonSpec,
    mode: EstimateMode,
    rng: &mut R,
) -> Result<GradEstimate> {
    weighted_bon_clone("star", true, policy, bench, spec, mode, rng)
}

/// Supervised step toward BoN-selected answers, ignoring reward:
/// `E_{x, y~pi_bon}[grad log pi(y|x)]`.
pub fn grad_distill_best<R: Rng + ?Sized>(
    policy: &Policy,
    bench: &Benchmark,
    spec: &BonSpec,
    mode: EstimateMode,
    rng: &mut R,
) -> Result<GradEstimate> {
    weighted_bon_clone("distill-best", false, policy, bench, spec, mode, rng)
}

fn weighted_bon_clone<R: Rng + ?Sized>(
    name: &'static str,
    reward_weighted: bool,
    policy: &Policy,
    bench: &Benchmark,
    spec: &BonSpec,
    mode: EstimateMode,
    rng: &mut R,
) -> Result<GradEstimate> {
    let probs = all_probs(policy, bench, spec.t)?;
    let mut grad = vec![0.0; policy.dim()];
    let mut diagnostics = Diagnostics::default();
    match mode {
        EstimateMode::ExactExpectation => {
            for (x, (task, w)) in bench.tasks.iter().zip(&bench.weights).enumerate() {
                let dist = bon_dist(&probs[x], &task.scores(spec.scorer), spec.n);
                let rewards = task.rewards();
                let coeffs: Vec<f64> = dist
                    .iter()
                    .zip(&rewards)
                    .map(|(d, r)| w * d * if reward_weighted { *r } else { 1.0 })
                    .collect();
                policy.accumulate_score(x, &probs[x], &coeffs, spec.t, &mut grad);
                diagnostics.mean_reward += w * dist.iter().zip(&rewards).map(|(d, r)| d * r).sum::<f64>();
            }
        }
        EstimateMode::Sampled { batch } => {
            if batch == 0 {
                return domain("batch must be >= 1");
            }
            for x in draw_contexts(bench, batch, rng)? {
                let task = &bench.tasks[x];
                let sampler = Categorical::new(&probs[x])?;
                let (best, _) = bon_sample_with_candidates(&sampler, &task.scores(spec.scorer), spec, rng);
                let r = task.reward_value(best);
                diagnostics.mean_reward += r / batch as f64;
                let mut coeffs = vec![0.0; policy.answers()];
                coeffs[best] = if reward_weighted { r } else { 1.0 } / batch as f64;
                policy.accumulate_score(x, &probs[x], &coeffs, spec.t, &mut grad);
            }
        }
    }
    check_finite(&grad, name, None)?;
    Ok(GradEstimate {
        grad,
        estimator: name,
        mode,
        diagnostics,
    })
}

/// REINFORCE on `E_x E_{y~pi}[reward]` with a per-context baseline.
#[allow(clippy::too_many_arguments)]
pub fn grad_reinforce<R: Rng + ?Sized>(
    policy: &Policy,
    bench: &Benchmark,
    t: Temperature,
    signal: RewardSignal,
    baseline: &BaselineTable,
    mode: EstimateMode,
    sample: &SampleConfig,
    rng: &mut R,
) -> Result<GradEstimate> {
    const NAME: &str = "reinforce";
    if baseline.values.len() != bench.len() {
        return domain("baseline table needs one value per context");
    }
    let probs = all_probs(policy, bench, t)?;
    let mut grad = vec![0.0; policy.dim()];
    let mut diagnostics = Diagnostics {
        baselines: baseline.values.clone(),
        ..Diagnostics::default()
    };
    match mode {
        EstimateMode::ExactExpectation => {
            for (x, (task, w)) in bench.tasks.iter().zip(&bench.weights).enumerate() {
                let b = baseline.get(x);
                let rewards = reward_vector(task, signal);
                let coeffs: Vec<f64> = probs[x]
                    .iter()
                    .zip(&rewards)
                    .map(|(p, r)| w * p * (r - b))
                    .collect();
                policy.accumulate_score(x, &probs[x], &coeffs, t, &mut grad);
                diagnostics.mean_reward += w * probs[x].iter().zip(&rewards).map(|(p, r)| p * r).sum::<f64>();
                diagnostics.baseline_mse +=
                    w * probs[x].iter().zip(&rewards).map(|(p, r)| p * (r - b) * (r - b)).sum::<f64>();
            }
        }
        EstimateMode::Sampled { batch } => {
            sample.check()?;
            let k = sample.samples_per_context;
            let mut draws = Vec::with_capacity(batch * k);
            for x in draw_contexts(bench, batch, rng)? {
                let sampler = Categorical::new(&probs[x])?;
                let rewards = reward_vector(&bench.tasks[x], signal);
                for _ in 0..k {
                    let y = sampler.draw(rng);
                    draws.push((x, y, rewards[y] - baseline.get(x), rewards[y]));
                    diagnostics.observations.push((x, rewards[y]));
                }
            }
            let total = draws.len() as f64;
            let mut adv: Vec<f64> = draws.iter().map(|d| d.2).collect();
            diagnostics.mean_reward = draws.iter().map(|d| d.3).sum::<f64>() / total;
            diagnostics.baseline_mse = adv.iter().map(|a| a * a).sum::<f64>() / total;
            if sample.normalize_advantages {
                normalize_advantages(&mut adv);
            }
            for (&(x, y, _, _), a) in draws.iter().zip(adv) {
                let mut coeffs = vec![0.0; policy.answers()];
                coeffs[y] = a / total;
                policy.accumulate_score(x, &probs[x], &coeffs, t, &mut grad);
            }
        }
    }
    check_finite(&grad, NAME, None)?;
    Ok(GradEstimate {
        grad,
        estimator: NAME,
        mode,
        diagnostics,
    })
}

/// Plain SFT: `E_{x, y~pi*}[grad log pi(y|x)]`.
pub fn grad_sft<R: Rng + ?Sized>(
    policy: &Policy,
    bench: &Benchmark,
    t: Temperature,
    mode: EstimateMode,
    rng: &mut R,
) -> Result<GradEstimate> {
    let probs = all_probs(policy, bench, t)?;
    let mut grad = vec![0.0; policy.dim()];
    match mode {
        EstimateMode::ExactExpectation => {
            for (x, (task, w)) in bench.tasks.iter().zip(&bench.weights).enumerate() {
                let coeffs: Vec<f64> = task.expert.iter().map(|e| w * e).collect();
                policy.accumulate_score(x, &probs[x], &coeffs, t, &mut grad);
            }
        }
        EstimateMode::Sampled { batch } => {
            if batch == 0 {
                return domain("batch must be >= 1");
            }
            for x in draw_contexts(bench, batch, rng)? {
                let y = Categorical::new(&bench.tasks[x].expert)?.draw(rng);
                let mut coeffs = vec![0.0; policy.answers()];
                coeffs[y] = 1.0 / batch as f64;
                policy.accumulate_score(x, &probs[x], &coeffs, t, &mut grad);
            }
        }
    }
    check_finite(&grad, "sft", None)?;
    Ok(GradEstimate {
        grad,
        estimator: "sft",
        mode,
        diagnostics: Diagnostics::default(),
    })
}

/// `grad_theta sum_x P(x) KL(pi_theta(.|x) || anchor(.|x))`.
pub fn grad_kl_to_anchor(policy: &Policy, anchor: &Policy, bench: &Benchmark, t: Temperature) -> Result<Vec<f64>> {
    bench.check_policy(policy)?;
    let mut grad = vec![0.0; policy.dim()];
    for (x, w) in bench.weights.iter().enumerate() {
        let probs = policy.prob_dist(x, t)?;
        let logp = policy.log_prob_dist(x, t)?;
        let loga = anchor.log_prob_dist(x, t)?;
        let coeffs: Vec<f64> = (0..probs.len())
            .map(|y| w * probs[y] * (logp[y] - loga[y]))
            .collect();
        policy.accumulate_score(x, &probs, &coeffs, t, &mut grad);
    }
    Ok(grad)
}
