//! Gradient-ascent training loops for every fine-tuning method, with an EMA
//! anchor policy and an annealed KL penalty toward it.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bon::{bon_dist, pass_at_n, Benchmark, BonSpec, Scorer, WinMode};
use crate::error::{BonError, Result};
use crate::estimators::{
    expert_dataset, grad_bon_rl, grad_bon_rlb, grad_bon_rlb_p, grad_bon_sft, grad_distill_best, grad_kl_to_anchor,
    grad_reinforce, grad_sft, grad_star, update_baseline, BaselineKind, BaselineTable, BonRlConfig, BonSftConfig,
    BonWeights, EstimateMode, ExpertItem, GradEstimate, Lambda, PFailSource, RewardSignal, SampleConfig,
    SelectionModel,
};
use crate::numeric::{fmt17, kl_divergence, norm2};
use crate::policies::{Policy, Temperature};
use crate::rng::{stream, ALL_TASKS};
use crate::variational::{calibrate_benchmark, solve_lambda, tilt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sft,
    BonSft,
    Star,
    RlV,
    RlS,
    BonRlV,
    BonRlS,
    #[serde(rename = "bon-rlb")]
    Bonrlb,
    #[serde(rename = "bon-rlb-p")]
    BonrlbP,
    DistillBest,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Sft,
        Method::BonSft,
        Method::Star,
        Method::RlV,
        Method::RlS,
        Method::BonRlV,
        Method::BonRlS,
        Method::Bonrlb,
        Method::BonrlbP,
        Method::DistillBest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sft => "sft",
            Method::BonSft => "bon-sft",
            Method::Star => "star",
            Method::RlV => "rl-v",
            Method::RlS => "rl-s",
            Method::BonRlV => "bon-rl-v",
            Method::BonRlS => "bon-rl-s",
            Method::Bonrlb => "bon-rlb",
            Method::BonrlbP => "bon-rlb-p",
            Method::DistillBest => "distill-best",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| BonError::Spec(format!("unknown method {s:?}")))
    }

    /// Scorer the method's BoN step selects with.
    pub fn selection_scorer(self) -> Scorer {
        match self {
            Method::RlS | Method::BonRlS | Method::Bonrlb | Method::BonrlbP => Scorer::EnvReward,
            _ => Scorer::Verifier,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Exact,
    Sampled,
}

/// Where BoN-SFT and BoN-RL take their tilt strength from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaChoice {
    /// Re-calibrated per task at every step against the current policy.
    Calibrated,
    /// The root of the scalar equation for `n_prime`, shared by all tasks.
    RootSolve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub n_prime: u64,
    pub t_prime: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub kl_coef_start: f64,
    pub kl_coef_end: f64,
    pub kl_anneal_steps: usize,
    pub kl_anneal_delay: usize,
    pub anchor_ema: f64,
    pub pfail_clip: (f64, f64),
    pub seed: u64,
    pub mode: TrainMode,
    /// `N` of the logged pass@N and BoN accuracy; `n_prime` when `None`.
    pub eval_n: Option<u64>,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub lambda: LambdaChoice,
    /// Sampled mode: where BoN-RLB gets `P_fail`.
    pub pfail_source: PFailSource,
    /// Sampled mode: learned-table step size; 0 uses exact baselines.
    pub baseline_lr: f64,
    pub normalize_advantages: bool,
}

impl TrainConfig {
    /// Toy-scale defaults: plain gradient ascent at `lr = 1e-2` with the
    /// the reference anchor and KL schedule.
    pub fn new(method: Method) -> Self {
        TrainConfig {
            method,
            n_prime: 8,
            t_prime: 1.0,
            steps: 500,
            batch_size: 32,
            lr: 1e-2,
            kl_coef_start: 1.0,
            kl_coef_end: 0.075,
            kl_anneal_steps: 2500,
            kl_anneal_delay: 10,
            anchor_ema: 0.01,
            pfail_clip: crate::estimators::DEFAULT_PFAIL_CLIP,
            seed: 0,
            mode: TrainMode::Exact,
            eval_n: None,
            eval_every: 10,
            checkpoint_every: 100,
            lambda: LambdaChoice::Calibrated,
            pfail_source: PFailSource::Exact,
            baseline_lr: 0.1,
            normalize_advantages: false,
        }
    }

    pub fn eval_n(&self) -> u64 {
        self.eval_n.unwrap_or(self.n_prime)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(BonError::Spec(m));
        if self.n_prime == 0 {
            return err("train.n_prime must be >= 1".into());
        }
        if self.eval_n == Some(0) {
            return err("train.eval_n must be >= 1".into());
        }
        if !(self.t_prime > 0.0 && self.t_prime.is_finite()) {
            return err(format!("train.t_prime must be positive, got {}", self.t_prime));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return err(format!("train.lr must be finite and >= 0, got {}", self.lr));
        }
        if !(self.anchor_ema > 0.0 && self.anchor_ema <= 1.0) {
            return err(format!("train.anchor_ema must lie in (0, 1], got {}", self.anchor_ema));
        }
        if !(self.kl_coef_end <= self.kl_coef_start && self.kl_coef_end >= 0.0) {
            return err("train.kl_coef_end must satisfy 0 <= kl_coef_end <= kl_coef_start".into());
        }
        let (lo, hi) = self.pfail_clip;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return err(format!("train.pfail_clip [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"));
        }
        if self.eval_every == 0 || self.checkpoint_every == 0 {
            return err("train.eval_every and train.checkpoint_every must be >= 1".into());
        }
        if self.mode == TrainMode::Sampled && self.batch_size == 0 {
            return err("train.batch_size must be >= 1 in sampled mode".into());
        }
        if !(self.baseline_lr >= 0.0 && self.baseline_lr <= 1.0) {
            return err("train.baseline_lr must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Rejects method/benchmark pairs that cannot run.
    pub fn check_benchmark(&self, bench: &Benchmark, policy: &Policy) -> Result<()> {
        self.validate()?;
        bench.check_policy(policy)?;
        if matches!(self.method, Method::Sft | Method::BonSft) && expert_dataset(bench).is_empty() {
            return Err(BonError::Spec(format!("method {} needs expert data", self.method.as_str())));
        }
        Ok(())
    }
}

/// Constant `kl_coef_start` before the delay, then linear to `kl_coef_end`
/// over `kl_anneal_steps`, then constant.
pub fn kl_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    if step < cfg.kl_anneal_delay {
        return cfg.kl_coef_start;
    }
    if cfg.kl_anneal_steps == 0 {
        return cfg.kl_coef_end;
    }
    let frac = ((step - cfg.kl_anneal_delay) as f64 / cfg.kl_anneal_steps as f64).min(1.0);
    cfg.kl_coef_start * (1.0 - frac) + cfg.kl_coef_end * frac
}

/// `theta_anchor <- (1 - ema) theta_anchor + ema theta_current`.
pub fn anchor_update(anchor: &Policy, current: &Policy, ema: f64) -> Result<Policy> {
    if !(ema > 0.0 && ema <= 1.0) {
        return Err(BonError::Domain(format!("ema must lie in (0, 1], got {ema}")));
    }
    if anchor.dim() != current.dim() {
        return Err(BonError::Domain("anchor and current policy differ in shape".into()));
    }
    let theta = if ema == 1.0 {
        current.theta().to_vec()
    } else {
        anchor
            .theta()
            .iter()
            .zip(current.theta())
            .map(|(a, c)| (1.0 - ema) * a + ema * c)
            .collect()
    };
    anchor.with_theta(theta)
}

/// `sum_x P(x) KL(pi(.|x) || anchor(.|x))`.
pub fn kl_to_anchor(policy: &Policy, anchor: &Policy, bench: &Benchmark, t: Temperature) -> Result<f64> {
    bench.check_policy(policy)?;
    let mut total = 0.0;
    for (x, w) in bench.weights.iter().enumerate() {
        total += w * kl_divergence(&policy.prob_dist(x, t)?, &anchor.prob_dist(x, t)?);
    }
    Ok(total.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainRecord {
    pub step: usize,
    pub objective: f64,
    pub pass_at_nprime: f64,
    pub bon_acc_at_nprime: f64,
    pub kl_anchor: f64,
    pub kl_coef: f64,
    pub grad_norm: f64,
}

/// Per-step gradient diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradRecord {
    pub step: usize,
    pub estimator: String,
    pub grad_norm: f64,
    pub mean_reward: f64,
    pub baseline_mse: f64,
    pub clipped_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub method: Method,
    /// Metrics of the initial policy (step 0).
    pub initial: TrainRecord,
    /// One record per step, measured after that step's update.
    pub records: Vec<TrainRecord>,
    pub diagnostics: Vec<GradRecord>,
}

impl TrainLog {
    pub fn final_record(&self) -> &TrainRecord {
        self.records.last().unwrap_or(&self.initial)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,method,objective,pass_at_nprime,bon_acc_at_nprime,kl_anchor,kl_coef,grad_norm\n");
        for r in std::iter::once(&self.initial).chain(&self.records) {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.step,
                self.method.as_str(),
                fmt17(r.objective),
                fmt17(r.pass_at_nprime),
                fmt17(r.bon_acc_at_nprime),
                fmt17(r.kl_anchor),
                fmt17(r.kl_coef),
                fmt17(r.grad_norm)
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub policy: Policy,
    pub anchor: Policy,
    pub log: TrainLog,
}

/// A run that stopped early; `last_good` is the last policy with finite
/// parameters.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: BonError,
    pub last_good: Option<Policy>,
    pub log: Option<TrainLog>,
}

impl From<BonError> for TrainFailure {
    fn from(error: BonError) -> Self {
        TrainFailure {
            error,
            last_good: None,
            log: None,
        }
    }
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for TrainFailure {}

/// Exact metrics: pass@N and BoN accuracy at `eval_n` under the method's
/// selection scorer, both at `t_prime`.
pub fn eval_metrics(policy: &Policy, bench: &Benchmark, cfg: &TrainConfig) -> Result<(f64, f64)> {
    let t = Temperature::new(cfg.t_prime)?;
    let n = cfg.eval_n();
    let scorer = cfg.method.selection_scorer();
    let mut pass = 0.0;
    let mut bon = 0.0;
    for (x, (task, w)) in bench.tasks.iter().zip(&bench.weights).enumerate() {
        let probs = policy.prob_dist(x, t)?;
        pass += w * pass_at_n(task.p_fail(&probs), n);
        bon += w * bon_dist(&probs, &task.scores(scorer), n)
            .iter()
            .zip(&task.reward)
            .filter(|(_, &r)| r)
            .map(|(d, _)| d)
            .sum::<f64>();
    }
    Ok((pass, bon))
}

fn lambdas(policy: &Policy, bench: &Benchmark, cfg: &TrainConfig, scorer: Scorer) -> Result<Lambda> {
    let t = Temperature::new(cfg.t_prime)?;
    Ok(match cfg.lambda {
        LambdaChoice::Calibrated => Lambda::PerTask(
            calibrate_benchmark(policy, bench, cfg.n_prime, t, scorer)?
                .into_iter()
                .map(|l| l.value)
                .collect(),
        ),
        LambdaChoice::RootSolve => Lambda::Shared(solve_lambda(cfg.n_prime)?.value),
    })
}

/// The method's own exact objective: expected reward for the RL family,
/// `sum_x P(x) (1 - P_fail^N)` for BoN-RLB, log-likelihood for SFT and the
/// tilted log-likelihood for BoN-SFT.
pub fn method_objective(policy: &Policy, bench: &Benchmark, cfg: &TrainConfig, lambda: Option<&Lambda>) -> Result<f64> {
    let t = Temperature::new(cfg.t_prime)?;
    let scorer = cfg.method.selection_scorer();
    let mut total = 0.0;
    for (x, (task, w)) in bench.tasks.iter().zip(&bench.weights).enumerate() {
        let probs = policy.prob_dist(x, t)?;
        let value = match cfg.method {
            Method::Sft | Method::DistillBest => {
                let target = if cfg.method == Method::Sft {
                    task.expert.clone()
                } else {
                    bon_dist(&probs, &task.scores(scorer), cfg.n_prime)
                };
                target
                    .iter()
                    .zip(&probs)
                    .filter(|(e, _)| **e > 0.0)
                    .map(|(e, p)| e * p.ln())
                    .sum()
            }
            Method::BonSft => {
                let l = lambda.map(|l| l.get(x)).unwrap_or(0.0);
                let q = crate::bon::win_rates(&probs, &task.scores(scorer), WinMode::Soft);
                let (_, log_z) = tilt(&probs, &q, l);
                task.expert
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| **e > 0.0)
                    .map(|(y, e)| e * (probs[y].ln() + l * q[y] - log_z))
                    .sum()
            }
            Method::RlV | Method::RlS => {
                let signal = if cfg.method == Method::RlV { task.verifier.clone() } else { task.rewards() };
                probs.iter().zip(&signal).map(|(p, r)| p * r).sum()
            }
            Method::Bonrlb | Method::BonrlbP => pass_at_n(task.p_fail(&probs), cfg.n_prime),
            Method::Star | Method::BonRlS | Method::BonRlV => {
                let rewards = if cfg.method == Method::BonRlV { task.verifier.clone() } else { task.rewards() };
                bon_dist(&probs, &task.scores(scorer), cfg.n_prime)
                    .iter()
                    .zip(&rewards)
                    .map(|(d, r)| d * r)
                    .sum()
            }
        };
        total += w * value;
    }
    Ok(total)
}

struct StepState<'a> {
    bench: &'a Benchmark,
    cfg: &'a TrainConfig,
    dataset: Vec<ExpertItem>,
    baseline: BaselineTable,
}

impl StepState<'_> {
    fn gradient(&mut self, policy: &Policy, lambda: Option<&Lambda>, step: usize) -> Result<GradEstimate> {
        let cfg = self.cfg;
        let bench = self.bench;
        let t = Temperature::new(cfg.t_prime)?;
        let mode = match cfg.mode {
            TrainMode::Exact => EstimateMode::ExactExpectation,
            TrainMode::Sampled => EstimateMode::Sampled { batch: cfg.batch_size },
        };
        let sample = SampleConfig {
            batch: cfg.batch_size.max(1),
            samples_per_context: 1,
            normalize_advantages: cfg.normalize_advantages,
        };
        let scorer = cfg.method.selection_scorer();
        let spec = BonSpec::new(cfg.n_prime, t, scorer)?;
        let weights = BonWeights::with_clip(cfg.n_prime, cfg.pfail_clip.0, cfg.pfail_clip.1)?;
        let mut rng = stream(cfg.seed, "train-step", ALL_TASKS, step as u64);
        let lambda = || lambda.cloned().unwrap_or(Lambda::Shared(0.0));
        if cfg.mode == TrainMode::Sampled && self.baseline.kind == BaselineKind::ExactEnumeration {
            let baseline_spec = match cfg.method {
                Method::RlV | Method::RlS => BonSpec::new(1, t, scorer)?,
                _ => spec,
            };
            self.baseline = BaselineTable::exact(policy, bench, &baseline_spec)?;
        }
        let est = match cfg.method {
            Method::Sft => grad_sft(policy, bench, t, mode, &mut rng)?,
            Method::BonSft => {
                let c = BonSftConfig {
                    spec,
                    lambda: lambda(),
                    win_mode: WinMode::Soft,
                    selection: match cfg.mode {
                        TrainMode::Exact => SelectionModel::Tilted,
                        TrainMode::Sampled => SelectionModel::ExactBon,
                    },
                };
                grad_bon_sft(policy, bench, &self.dataset, &c, mode, &mut rng)?
            }
            Method::Star => grad_star(policy, bench, &spec, mode, &mut rng)?,
            Method::DistillBest => grad_distill_best(policy, bench, &spec, mode, &mut rng)?,
            Method::RlV | Method::RlS => {
                let signal = if cfg.method == Method::RlV { RewardSignal::Verifier } else { RewardSignal::Env };
                grad_reinforce(policy, bench, t, signal, &self.baseline, mode, &sample, &mut rng)?
            }
            Method::BonRlV | Method::BonRlS => {
                let c = BonRlConfig {
                    spec,
                    lambda: lambda(),
                    win_mode: WinMode::Hard,
                    selection: match cfg.mode {
                        TrainMode::Exact => SelectionModel::Tilted,
                        TrainMode::Sampled => SelectionModel::ExactBon,
                    },
                    fresh_comparisons: true,
                    reward: if cfg.method == Method::BonRlV { RewardSignal::Verifier } else { RewardSignal::Env },
                    centred: true,
                };
                grad_bon_rl(policy, bench, &c, &self.baseline, mode, &sample, &mut rng)?
            }
            Method::Bonrlb => grad_bon_rlb(policy, bench, cfg.n_prime, t, cfg.pfail_source, &weights, mode, &mut rng)?,
            Method::BonrlbP => grad_bon_rlb_p(policy, bench, cfg.n_prime, t, cfg.pfail_source, &weights, mode, &mut rng)?,
        };
        if self.baseline.kind != BaselineKind::ExactEnumeration && !est.diagnostics.observations.is_empty() {
            self.baseline = update_baseline(&self.baseline, &est.diagnostics.observations, None)?;
        }
        Ok(est)
    }
}

/// Runs `cfg.steps` ascent steps from `init`. `on_checkpoint` sees the
/// policy every `checkpoint_every` steps and at the end.
pub fn train_with(
    cfg: &TrainConfig,
    bench: &Benchmark,
    init: &Policy,
    on_checkpoint: &mut dyn FnMut(usize, &Policy) -> Result<()>,
) -> std::result::Result<Trained, TrainFailure> {
    cfg.check_benchmark(bench, init)?;
    let t = Temperature::new(cfg.t_prime)?;
    let needs_lambda = matches!(cfg.method, Method::BonSft | Method::BonRlV | Method::BonRlS);
    let mut state = StepState {
        bench,
        cfg,
        dataset: expert_dataset(bench),
        baseline: if cfg.mode == TrainMode::Sampled && cfg.baseline_lr > 0.0 {
            BaselineTable::learned(bench.len(), 0.0, cfg.baseline_lr)
        } else {
            BaselineTable {
                values: vec![0.0; bench.len()],
                kind: BaselineKind::ExactEnumeration,
            }
        },
    };

    let mut policy = init.clone();
    let mut anchor = init.clone();
    let mut lambda = if needs_lambda { Some(lambdas(&policy, bench, cfg, cfg.method.selection_scorer())?) } else { None };
    let (pass0, bon0) = eval_metrics(&policy, bench, cfg)?;
    let initial = TrainRecord {
        step: 0,
        objective: method_objective(&policy, bench, cfg, lambda.as_ref())?,
        pass_at_nprime: pass0,
        bon_acc_at_nprime: bon0,
        kl_anchor: 0.0,
        kl_coef: kl_schedule(0, cfg),
        grad_norm: 0.0,
    };
    let mut log = TrainLog {
        method: cfg.method,
        initial,
        records: Vec::with_capacity(cfg.steps),
        diagnostics: Vec::with_capacity(cfg.steps),
    };
    let (mut pass, mut bon) = (pass0, bon0);

    for step in 0..cfg.steps {
        let fail = |error: BonError, policy: &Policy, log: &TrainLog| TrainFailure {
            error,
            last_good: Some(policy.clone()),
            log: Some(log.clone()),
        };
        if needs_lambda && cfg.lambda == LambdaChoice::Calibrated && step > 0 {
            lambda = Some(lambdas(&policy, bench, cfg, cfg.method.selection_scorer()).map_err(|e| fail(e, &policy, &log))?);
        }
        let est = state.gradient(&policy, lambda.as_ref(), step).map_err(|e| fail(e, &policy, &log))?;
        let coef = kl_schedule(step, cfg);
        let mut direction = est.grad.clone();
        if coef > 0.0 {
            let kl_grad = grad_kl_to_anchor(&policy, &anchor, bench, t).map_err(|e| fail(e, &policy, &log))?;
            for (d, k) in direction.iter_mut().zip(&kl_grad) {
                *d -= coef * k;
            }
        }
        let theta: Vec<f64> = policy
            .theta()
            .iter()
            .zip(&direction)
            .map(|(th, d)| th + cfg.lr * d)
            .collect();
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(fail(
                BonError::Numerical(format!("non-finite parameter {i} after step {}", step + 1)),
                &policy,
                &log,
            ));
        }
        policy = policy.with_theta(theta).map_err(|e| fail(e, &policy, &log))?;
        anchor = anchor_update(&anchor, &policy, cfg.anchor_ema).map_err(|e| fail(e, &policy, &log))?;

        let done = step + 1;
        if done % cfg.eval_every == 0 || done == cfg.steps {
            (pass, bon) = eval_metrics(&policy, bench, cfg).map_err(|e| fail(e, &policy, &log))?;
        }
        let objective = match cfg.mode {
            TrainMode::Exact => method_objective(&policy, bench, cfg, lambda.as_ref()).map_err(|e| fail(e, &policy, &log))?,
            TrainMode::Sampled => est.diagnostics.mean_reward,
        };
        let grad_norm = norm2(&est.grad);
        log.records.push(TrainRecord {
            step: done,
            objective,
            pass_at_nprime: pass,
            bon_acc_at_nprime: bon,
            kl_anchor: kl_to_anchor(&policy, &anchor, bench, t).map_err(|e| fail(e, &policy, &log))?,
            kl_coef: coef,
            grad_norm,
        });
        log.diagnostics.push(GradRecord {
            step: done,
            estimator: est.estimator.to_string(),
            grad_norm,
            mean_reward: est.diagnostics.mean_reward,
            baseline_mse: est.diagnostics.baseline_mse,
            clipped_count: est.diagnostics.clipped_count,
        });
        if done % cfg.checkpoint_every == 0 || done == cfg.steps {
            on_checkpoint(done, &policy).map_err(|e| fail(e, &policy, &log))?;
        }
    }
    Ok(Trained { policy, anchor, log })
}

pub fn train(cfg: &TrainConfig, bench: &Benchmark, init: &Policy) -> std::result::Result<Trained, TrainFailure> {
    train_with(cfg, bench, init, &mut |_, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_reference_values() {
        let cfg = TrainConfig::new(Method::Bonrlb);
        assert_eq!(kl_schedule(0, &cfg), 1.0);
        assert_eq!(kl_schedule(9, &cfg), 1.0);
        assert_eq!(kl_schedule(10 + 2500, &cfg), 0.075);
        assert_eq!(kl_schedule(100_000, &cfg), 0.075);
        assert!((kl_schedule(10 + 1250, &cfg) - (1.0 + 0.075) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn anchor_update_examples() {
        let zero = Policy::tabular(1, 3, vec![0.0; 3]).unwrap();
        let one = Policy::tabular(1, 3, vec![1.0; 3]).unwrap();
        let a = anchor_update(&zero, &one, 0.01).unwrap();
        assert!(a.theta().iter().all(|v| (v - 0.01).abs() < 1e-15));
        assert_eq!(anchor_update(&zero, &one, 1.0).unwrap().theta(), one.theta());
        assert!(anchor_update(&zero, &one, 0.0).is_err());
    }

    #[test]
    fn anchor_halving_time() {
        let one = Policy::tabular(1, 2, vec![1.0, -1.0]).unwrap();
        let mut a = Policy::tabular(1, 2, vec![0.0, 0.0]).unwrap();
        let gap = |a: &Policy| norm2(&[a.theta()[0] - 1.0, a.theta()[1] + 1.0]);
        let start = gap(&a);
        let mut steps = 0;
        while gap(&a) > start / 2.0 {
            a = anchor_update(&a, &one, 0.01).unwrap();
            steps += 1;
        }
        let predicted = 2f64.ln() / 0.01;
        assert!(((steps as f64) - predicted).abs() / predicted < 0.05, "{steps}");
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.as_str()).unwrap(), m);
        }
        assert!(Method::parse("ppo").is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::new(Method::Star);
        c.anchor_ema = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(Method::Star);
        c.kl_coef_end = 2.0;
        assert!(c.validate().is_err());
        assert!(TrainConfig::new(Method::Star).validate().is_ok());
    }
}
