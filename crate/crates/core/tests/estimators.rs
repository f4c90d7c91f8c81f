use bonlab::bon::{
    bon_accuracy, bon_dist, binary_bon_dist, Benchmark, BonSpec, Scorer, TaskInstance, WinMode,
};
use bonlab::checks::{random_instance, GRAD_SHAPE};
use bonlab::estimators::*;
use bonlab::oracle::{expected_reward_objective, finite_diff_grad, relative_error, FiniteDiffSpec};
use bonlab::policies::{Policy, Temperature};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EXACT: EstimateMode = EstimateMode::ExactExpectation;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(17)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

fn rl_cfg(n: u64, lambda: f64, selection: SelectionModel, centred: bool) -> BonRlConfig {
    BonRlConfig {
        spec: BonSpec::new(n, Temperature::ONE, Scorer::Verifier).unwrap(),
        lambda: Lambda::Shared(lambda),
        win_mode: WinMode::Hard,
        selection,
        fresh_comparisons: true,
        reward: RewardSignal::Env,
        centred,
    }
}

#[test]
fn bon_rl_at_n1_is_reinforce() {
    for seed in 0..20 {
        let inst = random_instance(seed, &GRAD_SHAPE).unwrap();
        let base = BaselineTable::learned(inst.bench.len(), 0.3, 0.0);
        let sc = SampleConfig::new(1);
        for selection in [SelectionModel::Tilted, SelectionModel::ExactBon] {
            let cfg = rl_cfg(1, 0.0, selection, false);
            let a = grad_bon_rl(&inst.policy, &inst.bench, &cfg, &base, EXACT, &sc, &mut rng()).unwrap();
            let b = grad_reinforce(&inst.policy, &inst.bench, Temperature::ONE, RewardSignal::Env, &base, EXACT, &sc, &mut rng()).unwrap();
            assert!(max_diff(&a.grad, &b.grad) < 1e-12);
        }
    }
}

#[test]
fn star_is_first_bon_rl_term() {
    for seed in 0..20 {
        let inst = random_instance(seed, &GRAD_SHAPE).unwrap();
        let cfg = rl_cfg(inst.n, 0.0, SelectionModel::ExactBon, false);
        let zero = BaselineTable::zeros(inst.bench.len());
        let a = grad_bon_rl(&inst.policy, &inst.bench, &cfg, &zero, EXACT, &SampleConfig::new(1), &mut rng()).unwrap();
        let b = grad_star(&inst.policy, &inst.bench, &cfg.spec, EXACT, &mut rng()).unwrap();
        assert!(max_diff(&a.grad, &b.grad) < 1e-12);
    }
}

fn two_answer(q_logit: f64) -> (Policy, Benchmark) {
    let task = TaskInstance::new(0, vec![true, false], vec![0.2, 0.7], vec![1.0, 0.0]).unwrap();
    (
        Policy::tabular(1, 2, vec![q_logit, 0.0]).unwrap(),
        Benchmark::uniform(vec![task]).unwrap(),
    )
}

#[test]
fn star_points_toward_correct_and_vanishes_without_reward() {
    let (policy, bench) = two_answer(-0.4);
    let spec = BonSpec::new(4, Temperature::ONE, Scorer::EnvReward).unwrap();
    let g = grad_star(&policy, &bench, &spec, EXACT, &mut rng()).unwrap();
    assert!(g.grad[0] > 0.0);

    let wrong = TaskInstance {
        id: 0,
        reward: vec![false, false],
        verifier: vec![0.1, 0.2],
        expert: vec![0.5, 0.5],
    };
    let bench0 = Benchmark { tasks: vec![wrong], weights: vec![1.0] };
    let g0 = grad_star(&policy, &bench0, &spec, EXACT, &mut rng()).unwrap();
    assert!(g0.grad.iter().all(|v| *v == 0.0));
}

#[test]
fn rlb_n1_two_answers_matches_hand_derivative() {
    for logit in [-1.5, 0.0, 0.8] {
        let (policy, bench) = two_answer(logit);
        let q = 1.0 / (1.0 + (-logit as f64).exp());
        let g = grad_bon_rlb(&policy, &bench, 1, Temperature::ONE, PFailSource::Exact, &BonWeights::unclipped(1), EXACT, &mut rng()).unwrap();
        // d q / d theta_0 = q (1 - q), d q / d theta_1 = -q (1 - q)
        assert!((g.grad[0] - q * (1.0 - q)).abs() < 1e-14);
        assert!((g.grad[1] + q * (1.0 - q)).abs() < 1e-14);
        let p = grad_bon_rlb_p(&policy, &bench, 1, Temperature::ONE, PFailSource::Exact, &BonWeights::unclipped(1), EXACT, &mut rng()).unwrap();
        assert!(max_diff(&g.grad, &p.grad) < 1e-10);
    }
}

#[test]
fn change_of_measure_identity() {
    for seed in 0..50 {
        let inst = random_instance(seed, &GRAD_SHAPE).unwrap();
        let t = Temperature::ONE;
        for (x, task) in inst.bench.tasks.iter().enumerate() {
            let probs = inst.policy.prob_dist(x, t).unwrap();
            let p = task.p_fail(&probs);
            let dist = binary_bon_dist(&probs, &task.reward, inst.n);
            let restricted = |correct: bool| {
                let coeffs: Vec<f64> = dist.iter().zip(&task.reward).map(|(d, &r)| if r == correct { *d } else { 0.0 }).collect();
                let mut out = vec![0.0; inst.policy.dim()];
                inst.policy.accumulate_score(x, &probs, &coeffs, t, &mut out);
                out
            };
            let neg = restricted(false);
            let pos = restricted(true);
            let nf = inst.n as f64;
            let k = p.powf(nf - 1.0) * (1.0 - p) / (1.0 - p.powf(nf));
            let predicted: Vec<f64> = pos.iter().map(|v| -k * v).collect();
            assert!(max_diff(&neg, &predicted) < 1e-10, "seed {seed}");
        }
    }
}

#[test]
fn reinforce_matches_finite_differences() {
    for seed in 0..30 {
        let inst = random_instance(seed, &GRAD_SHAPE).unwrap();
        let t = Temperature::ONE;
        let base = BaselineTable::learned(inst.bench.len(), 0.4, 0.0);
        for (signal, scorer) in [(RewardSignal::Env, Scorer::EnvReward), (RewardSignal::Verifier, Scorer::Verifier)] {
            let g = grad_reinforce(&inst.policy, &inst.bench, t, signal, &base, EXACT, &SampleConfig::new(1), &mut rng()).unwrap();
            let fd = finite_diff_grad(
                |th: &[f64]| expected_reward_objective(&inst.policy.with_theta(th.to_vec()).unwrap(), &inst.bench, t, scorer).unwrap(),
                inst.policy.theta(),
                &FiniteDiffSpec::default(),
            )
            .unwrap();
            assert!(max_diff(&g.grad, &fd) < 1e-6, "seed {seed}");
        }
    }
}

#[test]
fn reinforce_vanishes_at_saturated_policy() {
    let (policy, bench) = two_answer(100.0);
    let base = BaselineTable::zeros(1);
    let g = grad_reinforce(&policy, &bench, Temperature::ONE, RewardSignal::Env, &base, EXACT, &SampleConfig::new(1), &mut rng()).unwrap();
    assert!(g.norm() < 1e-8);
}

#[test]
fn exact_baseline_is_bon_expected_reward() {
    for seed in 0..20 {
        let inst = random_instance(seed, &GRAD_SHAPE).unwrap();
        let spec = BonSpec::new(inst.n, Temperature::ONE, Scorer::Verifier).unwrap();
        let table = BaselineTable::exact(&inst.policy, &inst.bench, &spec).unwrap();
        let refreshed = update_baseline(&table, &[], Some((&inst.policy, &inst.bench, &spec))).unwrap();
        for (x, task) in inst.bench.tasks.iter().enumerate() {
            let probs = inst.policy.prob_dist(x, spec.t).unwrap();
            let direct: f64 = bon_dist(&probs, &task.verifier, inst.n)
                .iter()
                .zip(&task.reward)
                .filter(|(_, &r)| r)
                .map(|(d, _)| d)
                .sum();
            assert!((table.values[x] - direct).abs() < 1e-12);
            assert!((refreshed.values[x] - bon_accuracy(&probs, task, &spec)).abs() < 1e-12);
        }
    }
}

#[test]
fn bon_sft_gradient_vanishes_at_its_maximiser() {
    let tasks = vec![
        TaskInstance::new(0, vec![true, true, false], vec![0.3, 0.9, 0.1], vec![0.7, 0.3, 0.0]).unwrap(),
        TaskInstance::new(1, vec![false, true, true, false], vec![0.5, -0.2, 0.4, 0.0], vec![0.0, 0.4, 0.6, 0.0]).unwrap(),
    ];
    let m = 4;
    let tasks: Vec<TaskInstance> = tasks
        .into_iter()
        .map(|t| {
            let pad = m - t.m();
            let mut reward = t.reward.clone();
            let mut verifier = t.verifier.clone();
            let mut expert = t.expert.clone();
            reward.extend(std::iter::repeat(false).take(pad));
            verifier.extend(std::iter::repeat(-1.0).take(pad));
            expert.extend(std::iter::repeat(0.0).take(pad));
            TaskInstance::new(t.id, reward, verifier, expert).unwrap()
        })
        .collect();
    // two expert answers per context keep the maximiser interior
    let data = vec![
        ExpertItem { x: 0, y: 0, weight: 0.35 },
        ExpertItem { x: 0, y: 1, weight: 0.15 },
        ExpertItem { x: 0, y: 2, weight: 0.05 },
        ExpertItem { x: 0, y: 3, weight: 0.05 },
        ExpertItem { x: 1, y: 1, weight: 0.15 },
        ExpertItem { x: 1, y: 2, weight: 0.15 },
        ExpertItem { x: 1, y: 0, weight: 0.05 },
        ExpertItem { x: 1, y: 3, weight: 0.05 },
    ];
    let bench = Benchmark::uniform(tasks).unwrap();
    let cfg = BonSftConfig {
        spec: BonSpec::new(4, Temperature::ONE, Scorer::Verifier).unwrap(),
        lambda: Lambda::Shared(1.2),
        win_mode: WinMode::Soft,
        selection: SelectionModel::Tilted,
    };
    let mut policy = Policy::uniform(2, m).unwrap();
    let mut norm = f64::INFINITY;
    for _ in 0..200_000 {
        let g = grad_bon_sft(&policy, &bench, &data, &cfg, EXACT, &mut rng()).unwrap();
        norm = g.norm();
        if norm < 1e-10 {
            break;
        }
        let theta: Vec<f64> = policy.theta().iter().zip(&g.grad).map(|(t, d)| t + 1.0 * d).collect();
        policy = policy.with_theta(theta).unwrap();
    }
    assert!(norm < 1e-8, "grad norm {norm}");
}

#[test]
fn reused_comparisons_bias_bon_rl() {
    // with the candidates reused, y' never beats the pick and the
    // comparison term disappears
    let inst = random_instance(6000, &bonlab::checks::InstanceShape {
        max_contexts: 2,
        min_m: 3,
        max_m: 3,
        n_choices: &[3],
        ties: false,
    })
    .unwrap();
    let mut cfg = rl_cfg(3, 2.0, SelectionModel::ExactBon, true);
    let base = BaselineTable::exact(&inst.policy, &inst.bench, &cfg.spec).unwrap();
    let exact = grad_bon_rl(&inst.policy, &inst.bench, &cfg, &base, EXACT, &SampleConfig::new(1), &mut rng()).unwrap();
    cfg.fresh_comparisons = false;
    let mut r = rng();
    let batches = 20_000;
    let mut mean = vec![0.0; exact.grad.len()];
    for _ in 0..batches {
        let g = grad_bon_rl(&inst.policy, &inst.bench, &cfg, &base, EstimateMode::Sampled { batch: 4 }, &SampleConfig::new(4), &mut r).unwrap();
        for (m, v) in mean.iter_mut().zip(&g.grad) {
            *m += v / batches as f64;
        }
    }
    let star_like = grad_bon_rl(&inst.policy, &inst.bench, &rl_cfg(3, 0.0, SelectionModel::ExactBon, true), &base, EXACT, &SampleConfig::new(1), &mut rng()).unwrap();
    assert!(relative_error(&mean, &star_like.grad, 1e-6) < 0.1);
    assert!(relative_error(&exact.grad, &star_like.grad, 1e-6) > 0.1);
}
