//! Randomised correctness checks run by the test suite and the `gradcheck`
//! and `oracle` commands. Each check returns one [`OracleRecord`] per
//! instance and metric.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bon::{binary_bon_dist, bon_dist, Benchmark, BonSpec, Scorer, TaskInstance, TieBreak, WinMode};
use crate::error::Result;
use crate::estimators::{
    expert_dataset, grad_bon_rl, grad_bon_rlb, grad_bon_rlb_p, grad_bon_sft, grad_distill_best, grad_reinforce,
    grad_sft, grad_star, BaselineTable, BonRlConfig, BonSftConfig, BonWeights, EstimateMode, ExpertItem, Lambda,
    PFailSource, RewardSignal, SampleConfig, SelectionModel,
};
use crate::oracle::{
    brute_force_bon_probs, finite_diff_grad, pass_objective, relative_error, sft_objective, tilted_reward_objective,
    FiniteDiffSpec, OracleRecord,
};
use crate::policies::{Policy, Temperature};
use crate::variational::{calibrate_benchmark, calibrate_lambda_probs, solve_lambda, tilt_kl};
use crate::bon::win_rates;

/// Scale floor for relative gradient errors.
pub const GRAD_FLOOR: f64 = 1e-6;

/// A random tabular problem.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub seed: u64,
    pub policy: Policy,
    pub bench: Benchmark,
    pub n: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct InstanceShape {
    pub max_contexts: usize,
    pub min_m: usize,
    pub max_m: usize,
    pub n_choices: &'static [u64],
    /// Round verifier scores to one decimal so ties occur.
    pub ties: bool,
}

pub const SMALL_SHAPE: InstanceShape = InstanceShape {
    max_contexts: 3,
    min_m: 2,
    max_m: 4,
    n_choices: &[1, 2, 3, 4],
    ties: true,
};

pub const GRAD_SHAPE: InstanceShape = InstanceShape {
    max_contexts: 5,
    min_m: 2,
    max_m: 8,
    n_choices: &[1, 2, 4, 8],
    ties: false,
};

pub fn random_instance(seed: u64, shape: &InstanceShape) -> Result<RandomInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let contexts = rng.gen_range(1..=shape.max_contexts);
    let m = rng.gen_range(shape.min_m..=shape.max_m);
    let n = shape.n_choices[rng.gen_range(0..shape.n_choices.len())];
    let mut tasks = Vec::with_capacity(contexts);
    for id in 0..contexts {
        let mut reward: Vec<bool> = (0..m).map(|_| rng.gen_bool(0.4)).collect();
        if !reward.iter().any(|&r| r) {
            let y = rng.gen_range(0..m);
            reward[y] = true;
        }
        let verifier: Vec<f64> = (0..m)
            .map(|y| {
                let z: f64 = rng.sample(StandardNormal);
                let v = 0.8 * z + if reward[y] { 0.5 } else { 0.0 };
                if shape.ties {
                    (v * 2.0).round() / 2.0
                } else {
                    v
                }
            })
            .collect();
        let raw: Vec<f64> = reward.iter().map(|&r| if r { rng.gen_range(0.2..1.0) } else { 0.0 }).collect();
        let s: f64 = raw.iter().sum();
        let expert = raw.iter().map(|v| v / s).collect();
        tasks.push(TaskInstance::new(id as u64, reward, verifier, expert)?);
    }
    let raw_w: Vec<f64> = (0..contexts).map(|_| rng.gen_range(0.2..1.0)).collect();
    let sw: f64 = raw_w.iter().sum();
    let bench = Benchmark::new(tasks, raw_w.iter().map(|w| w / sw).collect())?;
    let theta = (0..contexts * m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(RandomInstance {
        seed,
        policy: Policy::tabular(contexts, m, theta)?,
        bench,
        n,
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

/// Order-statistics distribution against tuple enumeration (both tie rules)
/// and, with the env reward as scorer, against the binary closed form.
pub fn check_distributions(seed0: u64, count: u64) -> Result<Vec<OracleRecord>> {
    let mut out = Vec::new();
    for seed in seed0..seed0 + count {
        let inst = random_instance(seed, &SMALL_SHAPE)?;
        let mut worst = 0.0f64;
        for (x, task) in inst.bench.tasks.iter().enumerate() {
            let probs = inst.policy.prob_dist(x, Temperature::ONE)?;
            for scorer in [Scorer::Verifier, Scorer::EnvReward] {
                let scores = task.scores(scorer);
                let main = bon_dist(&probs, &scores, inst.n);
                for tie in [TieBreak::UniformAmongMax, TieBreak::FirstSample] {
                    let brute = brute_force_bon_probs(&probs, &scores, inst.n, tie)?;
                    worst = worst.max(max_abs_diff(&main, &brute));
                }
                if scorer == Scorer::EnvReward {
                    worst = worst.max(max_abs_diff(&main, &binary_bon_dist(&probs, &task.reward, inst.n)));
                }
            }
        }
        out.push(OracleRecord::at_most("bon-distribution", seed, "max_abs_diff", worst, 1e-12));
    }
    Ok(out)
}

fn theta_objective<'a, F: Fn(&Policy) -> Result<f64> + 'a>(policy: &'a Policy, f: F) -> impl FnMut(&[f64]) -> f64 + 'a {
    move |theta: &[f64]| {
        let p = policy.with_theta(theta.to_vec()).expect("same shape");
        f(&p).unwrap_or(f64::NAN)
    }
}

/// BoN-RLB and its positive-only form against finite differences of
/// `sum_x P(x) (1 - P_fail^N)`, and against each other.
pub fn check_rlb_gradients(seed0: u64, count: u64) -> Result<Vec<OracleRecord>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed0);
    for seed in seed0..seed0 + count {
        let inst = random_instance(seed, &GRAD_SHAPE)?;
        let (policy, bench, n) = (&inst.policy, &inst.bench, inst.n);
        let t = Temperature::ONE;
        let w = BonWeights::unclipped(n);
        let mode = EstimateMode::ExactExpectation;
        let a = grad_bon_rlb(policy, bench, n, t, PFailSource::Exact, &w, mode, &mut rng)?.grad;
        let b = grad_bon_rlb_p(policy, bench, n, t, PFailSource::Exact, &w, mode, &mut rng)?.grad;
        let fd = finite_diff_grad(
            theta_objective(policy, |p| pass_objective(p, bench, n, t)),
            policy.theta(),
            &FiniteDiffSpec::default(),
        )?;
        out.push(OracleRecord::at_most("bon-rlb-fd", seed, "rel_err", relative_error(&a, &fd, GRAD_FLOOR), 1e-5));
        out.push(OracleRecord::at_most("bon-rlb-p-fd", seed, "rel_err", relative_error(&b, &fd, GRAD_FLOOR), 1e-5));
        out.push(OracleRecord::at_most("bon-rlb-vs-p", seed, "max_abs_diff", max_abs_diff(&a, &b), 1e-10));
    }
    Ok(out)
}

fn dataset_items(data: &[ExpertItem]) -> Vec<(usize, usize, f64)> {
    data.iter().map(|d| (d.x, d.y, d.weight)).collect()
}

/// BoN-SFT (soft win rate, tilted selection) against finite differences of
/// its objective, plus the `lambda = 0` collapse to plain SFT.
pub fn check_sft_gradients(seed0: u64, count: u64) -> Result<Vec<OracleRecord>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed0);
    for seed in seed0..seed0 + count {
        let inst = random_instance(seed, &GRAD_SHAPE)?;
        let (policy, bench) = (&inst.policy, &inst.bench);
        let t = Temperature::ONE;
        let data = expert_dataset(bench);
        let lambda: Vec<f64> = (0..bench.len()).map(|x| 0.5 + (seed + x as u64) as f64 % 3.0).collect();
        let cfg = BonSftConfig {
            spec: BonSpec::new(inst.n, t, Scorer::Verifier)?,
            lambda: Lambda::PerTask(lambda.clone()),
            win_mode: WinMode::Soft,
            selection: SelectionModel::Tilted,
        };
        let g = grad_bon_sft(policy, bench, &data, &cfg, EstimateMode::ExactExpectation, &mut rng)?.grad;
        let items = dataset_items(&data);
        let fd = finite_diff_grad(
            theta_objective(policy, |p| sft_objective(p, bench, &items, &lambda, t, Scorer::Verifier, true)),
            policy.theta(),
            &FiniteDiffSpec::default(),
        )?;
        out.push(OracleRecord::at_most("bon-sft-fd", seed, "rel_err", relative_error(&g, &fd, GRAD_FLOOR), 1e-5));

        let zero = BonSftConfig {
            lambda: Lambda::Shared(0.0),
            ..cfg
        };
        let g0 = grad_bon_sft(policy, bench, &data, &zero, EstimateMode::ExactExpectation, &mut rng)?.grad;
        let plain = grad_sft(policy, bench, t, EstimateMode::ExactExpectation, &mut rng)?.grad;
        out.push(OracleRecord::at_most("bon-sft-lambda0", seed, "max_abs_diff", max_abs_diff(&g0, &plain), 1e-12));
    }
    Ok(out)
}

/// BoN-RL (hard win rate, calibrated and frozen lambda, tilted selection)
/// against finite differences of the tilted expected reward, plus baseline
/// shift invariance.
pub fn check_rl_gradients(seed0: u64, count: u64) -> Result<Vec<OracleRecord>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed0);
    for seed in seed0..seed0 + count {
        let inst = random_instance(seed, &GRAD_SHAPE)?;
        let (policy, bench) = (&inst.policy, &inst.bench);
        let t = Temperature::ONE;
        let scorer = Scorer::Verifier;
        let lambda: Vec<f64> = calibrate_benchmark(policy, bench, inst.n, t, scorer)?
            .iter()
            .map(|l| l.value)
            .collect();
        let cfg = BonRlConfig {
            spec: BonSpec::new(inst.n, t, scorer)?,
            lambda: Lambda::PerTask(lambda.clone()),
            win_mode: WinMode::Hard,
            selection: SelectionModel::Tilted,
            fresh_comparisons: true,
        reward: RewardSignal::Env,
            centred: true,
        };
        let base = BaselineTable::exact(policy, bench, &cfg.spec)?;
        let sample = SampleConfig::new(1);
        let mode = EstimateMode::ExactExpectation;
        let g = grad_bon_rl(policy, bench, &cfg, &base, mode, &sample, &mut rng)?.grad;
        let fd = finite_diff_grad(
            theta_objective(policy, |p| tilted_reward_objective(p, bench, &lambda, t, scorer)),
            policy.theta(),
            &FiniteDiffSpec::default(),
        )?;
        out.push(OracleRecord::at_most("bon-rl-fd", seed, "rel_err", relative_error(&g, &fd, GRAD_FLOOR), 1e-4));
        let shifted = grad_bon_rl(policy, bench, &cfg, &base.shifted(0.73), mode, &sample, &mut rng)?.grad;
        out.push(OracleRecord::at_most("bon-rl-baseline-shift", seed, "max_abs_diff", max_abs_diff(&g, &shifted), 1e-10));
    }
    Ok(out)
}

/// Root-solve residual and monotonicity over `N = 2..=max_n`, `lambda_1 = 0`,
/// and calibration optimality on a surrounding grid for random instances.
pub fn check_lambda(max_n: u64, seed0: u64, count: u64) -> Result<Vec<OracleRecord>> {
    let mut out = Vec::new();
    let mut worst_residual = 0.0f64;
    let mut violations = 0.0;
    let mut prev = solve_lambda(1)?;
    out.push(OracleRecord::at_most("lambda-1", 0, "abs_value", prev.value.abs(), 0.0));
    for n in 2..=max_n {
        let cur = solve_lambda(n)?;
        worst_residual = worst_residual.max(cur.residual.abs());
        if n > 2 && cur.value <= prev.value {
            violations += 1.0;
        }
        prev = cur;
    }
    out.push(OracleRecord::at_most("lambda-residual", 0, "max_abs_residual", worst_residual, 1e-10));
    out.push(OracleRecord::at_most("lambda-monotone", 0, "violations", violations, 0.0));

    for seed in seed0..seed0 + count {
        let inst = random_instance(seed, &GRAD_SHAPE)?;
        let n = inst.n.max(2);
        let mut excess = f64::NEG_INFINITY;
        for (x, task) in inst.bench.tasks.iter().enumerate() {
            let probs = inst.policy.prob_dist(x, Temperature::ONE)?;
            let scores = task.verifier.clone();
            let cal = calibrate_lambda_probs(&probs, &scores, n, WinMode::Hard);
            let target = bon_dist(&probs, &scores, n);
            let q = win_rates(&probs, &scores, WinMode::Hard);
            let at = tilt_kl(&probs, &q, &target, cal.value);
            let half = cal.value.max(1.0);
            for i in 0..100 {
                let l = (cal.value - half + 2.0 * half * i as f64 / 99.0).max(0.0);
                excess = excess.max(at - tilt_kl(&probs, &q, &target, l));
            }
        }
        out.push(OracleRecord::at_most("lambda-calibration", seed, "kl_excess_over_grid", excess, 1e-12));
    }
    Ok(out)
}

/// Running per-coordinate mean and variance.
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, v: &[f64]) {
        self.count += 1.0;
        for (i, x) in v.iter().enumerate() {
            let d = x - self.mean[i];
            self.mean[i] += d / self.count;
            self.m2[i] += d * (x - self.mean[i]);
        }
    }

    /// Largest `|mean - target| / stderr`; coordinates with no spread must
    /// match to 1e-12 or count as infinitely far.
    fn worst_z(&self, target: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.mean.len() {
            let diff = (self.mean[i] - target[i]).abs();
            let var = self.m2[i] / (self.count - 1.0);
            let se = (var / self.count).sqrt();
            let z = if se > 0.0 {
                diff / se
            } else if diff <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
        }
        worst
    }
}

/// For each estimator, the mean of `batches` sampled-mode gradients against
/// the exact-mode gradient, in units of the empirical standard error.
pub fn check_unbiasedness(seed: u64, batches: usize, batch: usize) -> Result<Vec<OracleRecord>> {
    let shape = InstanceShape {
        max_contexts: 3,
        min_m: 3,
        max_m: 4,
        n_choices: &[3],
        ties: true,
    };
    let inst = random_instance(seed, &shape)?;
    let (policy, bench, n) = (&inst.policy, &inst.bench, inst.n);
    let t = Temperature::ONE;
    let dim = policy.dim();
    let exact_mode = EstimateMode::ExactExpectation;
    let sampled = EstimateMode::Sampled { batch };
    let sample = SampleConfig::new(batch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);

    let spec_v = BonSpec::new(n, t, Scorer::Verifier)?;
    let data = expert_dataset(bench);
    let sft_cfg = BonSftConfig {
        spec: spec_v,
        lambda: Lambda::Shared(1.3),
        win_mode: WinMode::Soft,
        selection: SelectionModel::ExactBon,
    };
    let rl_cfg = BonRlConfig {
        spec: spec_v,
        lambda: Lambda::Shared(1.3),
        win_mode: WinMode::Hard,
        selection: SelectionModel::ExactBon,
        fresh_comparisons: true,
        reward: RewardSignal::Env,
        centred: true,
    };
    let rl_base = BaselineTable::exact(policy, bench, &spec_v)?;
    let rf_base = BaselineTable::exact(policy, bench, &BonSpec::new(1, t, Scorer::EnvReward)?)?;
    let w = BonWeights::new(n);

    type Est<'a> = Box<dyn Fn(EstimateMode, &mut ChaCha8Rng) -> Result<Vec<f64>> + 'a>;
    let estimators: Vec<(&str, Est)> = vec![
        ("bon-sft", Box::new(|m, r: &mut ChaCha8Rng| Ok(grad_bon_sft(policy, bench, &data, &sft_cfg, m, r)?.grad))),
        ("bon-rl", Box::new(|m, r: &mut ChaCha8Rng| Ok(grad_bon_rl(policy, bench, &rl_cfg, &rl_base, m, &sample, r)?.grad))),
        ("bon-rlb", Box::new(|m, r: &mut ChaCha8Rng| Ok(grad_bon_rlb(policy, bench, n, t, PFailSource::Exact, &w, m, r)?.grad))),
        ("bon-rlb-p", Box::new(|m, r: &mut ChaCha8Rng| Ok(grad_bon_rlb_p(policy, bench, n, t, PFailSource::Exact, &w, m, r)?.grad))),
        ("star", Box::new(|m, r: &mut ChaCha8Rng| Ok(grad_star(policy, bench, &spec_v, m, r)?.grad))),
        ("distill-best", Box::new(|m, r: &mut ChaCha8Rng| Ok(grad_distill_best(policy, bench, &spec_v, m, r)?.grad))),
        ("reinforce", Box::new(|m, r: &mut ChaCha8Rng| {
            Ok(grad_reinforce(policy, bench, t, RewardSignal::Env, &rf_base, m, &sample, r)?.grad)
        })),
        ("sft", Box::new(|m, r: &mut ChaCha8Rng| Ok(grad_sft(policy, bench, t, m, r)?.grad))),
    ];
    let mut out = Vec::new();
    for (name, est) in &estimators {
        let exact = est(exact_mode, &mut rng)?;
        let mut mom = Moments::new(dim);
        for _ in 0..batches {
            mom.push(&est(sampled, &mut rng)?);
        }
        out.push(OracleRecord::at_most(
            &format!("unbiased-{name}"),
            seed,
            "max_z",
            mom.worst_z(&exact),
            4.0,
        ));
    }
    Ok(out)
}
