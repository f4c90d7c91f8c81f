//! The Best-of-N inference policy.
//!
//! Draw `N` answers at temperature `T`, keep the one with the highest score.
//! Besides the sampler this module evaluates the selection distribution
//! exactly via order statistics: with answers sorted by score and `A(y)` the
//! base mass at or below `y`,
//!
//! ```text
//! pi_bon(y) = A(y)^N - (A(y) - pi(y))^N
//! ```
//!
//! Answers with equal scores form a tie group; the group receives
//! `(below + g)^N - below^N` and shares it in proportion to `pi` within the
//! group, which is the marginal under both tie rules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::numeric::geometric_ratio;
use crate::policies::{Categorical, Policy, Temperature};

/// Which score ranks the `N` candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scorer {
    /// The (possibly noisy) verifier `r(x, y)`.
    Verifier,
    /// The ground-truth binary reward `R(x, y)`.
    EnvReward,
}

impl Scorer {
    pub fn as_str(self) -> &'static str {
        match self {
            Scorer::Verifier => "verifier",
            Scorer::EnvReward => "env-reward",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    UniformAmongMax,
    FirstSample,
}

/// `(N, T, scorer, tie rule)`: everything that turns a base policy into a
/// BoN policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BonSpec {
    pub n: u64,
    pub t: Temperature,
    pub scorer: Scorer,
    pub tie_break: TieBreak,
}

impl BonSpec {
    pub fn new(n: u64, t: Temperature, scorer: Scorer) -> Result<Self> {
        if n == 0 {
            return domain("BoN sample count N must be >= 1");
        }
        Ok(BonSpec {
            n,
            t,
            scorer,
            tie_break: TieBreak::UniformAmongMax,
        })
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }
}

/// One context: its answer set, true reward, verifier scores and expert
/// distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub id: u64,
    pub reward: Vec<bool>,
    pub verifier: Vec<f64>,
    pub expert: Vec<f64>,
}

impl TaskInstance {
    pub fn new(id: u64, reward: Vec<bool>, verifier: Vec<f64>, expert: Vec<f64>) -> Result<Self> {
        let m = reward.len();
        if m == 0 {
            return domain(format!("task {id}: empty answer set"));
        }
        if verifier.len() != m || expert.len() != m {
            return domain(format!(
                "task {id}: reward/verifier/expert lengths {}/{}/{} disagree",
                m,
                verifier.len(),
                expert.len()
            ));
        }
        if !reward.iter().any(|&r| r) {
            return domain(format!("task {id}: no correct answer"));
        }
        if verifier.iter().any(|v| !v.is_finite()) {
            return domain(format!("task {id}: non-finite verifier score"));
        }
        if expert.iter().any(|&e| !(e >= 0.0)) {
            return domain(format!("task {id}: negative expert weight"));
        }
        let total: f64 = expert.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return domain(format!("task {id}: expert weights sum to {total}"));
        }
        if expert.iter().zip(&reward).any(|(&e, &r)| e > 0.0 && !r) {
            return domain(format!("task {id}: expert puts mass on an incorrect answer"));
        }
        Ok(TaskInstance {
            id,
            reward,
            verifier,
            expert,
        })
    }

    pub fn m(&self) -> usize {
        self.reward.len()
    }

    pub fn reward_value(&self, y: usize) -> f64 {
        if self.reward[y] {
            1.0
        } else {
            0.0
        }
    }

    pub fn rewards(&self) -> Vec<f64> {
        (0..self.m()).map(|y| self.reward_value(y)).collect()
    }

    pub fn scores(&self, scorer: Scorer) -> Vec<f64> {
        match scorer {
            Scorer::Verifier => self.verifier.clone(),
            Scorer::EnvReward => self.rewards(),
        }
    }

    /// Base-policy probability of an incorrect answer.
    pub fn p_fail(&self, probs: &[f64]) -> f64 {
        probs
            .iter()
            .zip(&self.reward)
            .filter(|(_, &r)| !r)
            .map(|(p, _)| p)
            .sum()
    }
}

/// Task list plus the prompt distribution over it. Context `x` of a policy
/// is task `x` of the benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub tasks: Vec<TaskInstance>,
    pub weights: Vec<f64>,
}

impl Benchmark {
    pub fn new(tasks: Vec<TaskInstance>, weights: Vec<f64>) -> Result<Self> {
        if tasks.is_empty() {
            return domain("benchmark needs at least one task");
        }
        if weights.len() != tasks.len() {
            return domain("one weight per task required");
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return domain("task weights must be nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return domain(format!("task weights sum to {total}, expected 1"));
        }
        Ok(Benchmark { tasks, weights })
    }

    /// Equal weight on every task.
    pub fn uniform(tasks: Vec<TaskInstance>) -> Result<Self> {
        let n = tasks.len();
        Self::new(tasks, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Policy shape check: one context per task, matching answer counts.
    pub fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.num_contexts() != self.len() {
            return domain(format!(
                "policy has {} contexts, benchmark has {} tasks",
                policy.num_contexts(),
                self.len()
            ));
        }
        if let Some(t) = self.tasks.iter().find(|t| t.m() != policy.answers()) {
            return domain(format!(
                "task {} has {} answers, policy has {}",
                t.id,
                t.m(),
                policy.answers()
            ));
        }
        Ok(())
    }
}

/// Exact BoN distribution from a base distribution and scores.
pub fn bon_dist(probs: &[f64], scores: &[f64], n: u64) -> Vec<f64> {
    let m = probs.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let total: f64 = probs.iter().sum();
    let nf = n as f64;
    let mut out = vec![0.0; m];
    let mut below_pow = 0.0;
    let mut cum = 0.0;
    let mut i = 0;
    while i < m {
        let mut j = i;
        while j + 1 < m && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..=j];
        let g_raw: f64 = group.iter().map(|&y| probs[y]).sum();
        cum += g_raw;
        let top = if j + 1 == m { 1.0 } else { cum / total };
        let top_pow = top.powf(nf);
        let mass = top_pow - below_pow;
        if g_raw > 0.0 {
            for &y in group {
                out[y] = mass * probs[y] / g_raw;
            }
        }
        below_pow = top_pow;
        i = j + 1;
    }
    out
}

/// Binary-reward closed form: wrong answers are scaled by `P_fail^(N-1)`,
/// correct ones by `(1 - P_fail^N) / (1 - P_fail)`.
pub fn binary_bon_dist(probs: &[f64], reward: &[bool], n: u64) -> Vec<f64> {
    let p_fail: f64 = probs
        .iter()
        .zip(reward)
        .filter(|(_, &r)| !r)
        .map(|(p, _)| p)
        .sum();
    if p_fail <= 0.0 || p_fail >= 1.0 {
        return probs.to_vec();
    }
    let nf = n as f64;
    let wrong_scale = p_fail.powf(nf - 1.0);
    let right_scale = geometric_ratio(p_fail, nf);
    probs
        .iter()
        .zip(reward)
        .map(|(&p, &r)| if r { p * right_scale } else { p * wrong_scale })
        .collect()
}

/// Index of the selected candidate among `candidates`.
pub fn select_best<R: Rng + ?Sized>(
    candidates: &[usize],
    scores: &[f64],
    tie_break: TieBreak,
    rng: &mut R,
) -> usize {
    let best = candidates
        .iter()
        .map(|&y| scores[y])
        .fold(f64::NEG_INFINITY, f64::max);
    match tie_break {
        TieBreak::FirstSample => *candidates
            .iter()
            .find(|&&y| scores[y] == best)
            .expect("non-empty candidate list"),
        TieBreak::UniformAmongMax => {
            let tied: Vec<usize> = candidates
                .iter()
                .copied()
                .filter(|&y| scores[y] == best)
                .collect();
            if tied.len() == 1 {
                tied[0]
            } else {
                tied[rng.gen_range(0..tied.len())]
            }
        }
    }
}

/// Draws `N` candidates and returns the selected answer together with the
/// candidate list.
pub fn bon_sample_with_candidates<R: Rng + ?Sized>(
    sampler: &Categorical,
    scores: &[f64],
    spec: &BonSpec,
    rng: &mut R,
) -> (usize, Vec<usize>) {
    let candidates: Vec<usize> = (0..spec.n).map(|_| sampler.draw(rng)).collect();
    let y = select_best(&candidates, scores, spec.tie_break, rng);
    (y, candidates)
}

pub fn bon_sample<R: Rng + ?Sized>(
    policy: &Policy,
    x: usize,
    task: &TaskInstance,
    spec: &BonSpec,
    rng: &mut R,
) -> Result<usize> {
    let probs = policy.prob_dist(x, spec.t)?;
    let sampler = Categorical::new(&probs)?;
    let scores = task.scores(spec.scorer);
    Ok(bon_sample_with_candidates(&sampler, &scores, spec, rng).0)
}

pub fn bon_exact_dist(
    policy: &Policy,
    x: usize,
    task: &TaskInstance,
    spec: &BonSpec,
) -> Result<Vec<f64>> {
    let probs = policy.prob_dist(x, spec.t)?;
    Ok(bon_dist(&probs, &task.scores(spec.scorer), spec.n))
}

pub fn bon_binary_dist(
    policy: &Policy,
    x: usize,
    task: &TaskInstance,
    n: u64,
    t: Temperature,
) -> Result<Vec<f64>> {
    if n == 0 {
        return domain("N must be >= 1");
    }
    let probs = policy.prob_dist(x, t)?;
    Ok(binary_bon_dist(&probs, &task.reward, n))
}

/// How the win rate compares two scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WinMode {
    /// `1{r(y) >= r(y')}`
    Hard,
    /// `sigmoid(r(y) - r(y'))`
    Soft,
}

impl WinMode {
    pub fn kernel(self, score_y: f64, score_other: f64) -> f64 {
        match self {
            WinMode::Hard => {
                if score_y >= score_other {
                    1.0
                } else {
                    0.0
                }
            }
            WinMode::Soft => crate::numeric::sigmoid(score_y - score_other),
        }
    }
}

/// `Q(y) = E_{y'~pi}[kernel(r(y), r(y'))]` for every answer.
pub fn win_rates(probs: &[f64], scores: &[f64], mode: WinMode) -> Vec<f64> {
    scores
        .iter()
        .map(|&sy| {
            probs
                .iter()
                .zip(scores)
                .map(|(&p, &so)| p * mode.kernel(sy, so))
                .sum()
        })
        .collect()
}

pub fn win_rate(
    policy: &Policy,
    x: usize,
    task: &TaskInstance,
    y: usize,
    t: Temperature,
    scorer: Scorer,
) -> Result<f64> {
    check_answer(task, y)?;
    let probs = policy.prob_dist(x, t)?;
    Ok(win_rates(&probs, &task.scores(scorer), WinMode::Hard)[y])
}

pub fn soft_win_rate(
    policy: &Policy,
    x: usize,
    task: &TaskInstance,
    y: usize,
    t: Temperature,
    scorer: Scorer,
) -> Result<f64> {
    check_answer(task, y)?;
    let probs = policy.prob_dist(x, t)?;
    Ok(win_rates(&probs, &task.scores(scorer), WinMode::Soft)[y])
}

fn check_answer(task: &TaskInstance, y: usize) -> Result<()> {
    if y < task.m() {
        Ok(())
    } else {
        domain(format!("answer {y} out of range for task {} (m = {})", task.id, task.m()))
    }
}

/// `1 - P_fail^N`.
pub fn pass_at_n(p_fail: f64, n: u64) -> f64 {
    crate::numeric::one_minus_pow(p_fail, n as f64)
}

pub fn pass_at_n_exact(
    policy: &Policy,
    x: usize,
    task: &TaskInstance,
    n: u64,
    t: Temperature,
) -> Result<f64> {
    if n == 0 {
        return domain("N must be >= 1");
    }
    Ok(pass_at_n(task.p_fail(&policy.prob_dist(x, t)?), n))
}

/// Unbiased pass@N from `k` samples with `c` correct:
/// `1 - C(k-c, N) / C(k, N)`, as a running product.
pub fn pass_at_n_unbiased(k: u64, c: u64, n: u64) -> Result<f64> {
    if c > k {
        return domain(format!("correct count {c} exceeds sample count {k}"));
    }
    if n == 0 || n > k {
        return domain(format!("need 1 <= N <= k, got N = {n}, k = {k}"));
    }
    if k - c < n {
        return Ok(1.0);
    }
    let mut ratio = 1.0;
    for i in (k - c + 1)..=k {
        ratio *= 1.0 - n as f64 / i as f64;
    }
    Ok(1.0 - ratio)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MajorityMode {
    /// Multinomial enumeration; `m <= 4`, `N <= 8`.
    ExactSmall,
    MonteCarlo { samples: usize },
}

/// Probability that the plurality answer of `N` draws is correct; tied modes
/// count fractionally (uniform tie-break in expectation).
pub fn majority_exact(probs: &[f64], reward: &[bool], n: u64) -> Result<f64> {
    let m = probs.len();
    if m > 4 || n > 8 {
        return domain(format!("exact majority vote needs m <= 4 and N <= 8, got m = {m}, N = {n}"));
    }
    if n == 0 {
        return domain("N must be >= 1");
    }
    let n = n as usize;
    let mut fact = [1.0f64; 9];
    for i in 1..=8 {
        fact[i] = fact[i - 1] * i as f64;
    }
    let mut counts = vec![0usize; m];
    let mut acc = 0.0;
    compositions(&mut counts, 0, n, &mut |c| {
        let mut prob = fact[n];
        for (y, &k) in c.iter().enumerate() {
            prob *= probs[y].powi(k as i32) / fact[k];
        }
        acc += prob * plurality_correct_fraction(c, reward);
    });
    Ok(acc)
}

fn compositions(counts: &mut Vec<usize>, pos: usize, left: usize, f: &mut impl FnMut(&[usize])) {
    if pos + 1 == counts.len() {
        counts[pos] = left;
        f(counts);
        return;
    }
    for k in 0..=left {
        counts[pos] = k;
        compositions(counts, pos + 1, left - k, f);
    }
}

fn plurality_correct_fraction(counts: &[usize], reward: &[bool]) -> f64 {
    let best = *counts.iter().max().expect("non-empty");
    let mut modes = 0usize;
    let mut correct = 0usize;
    for (c, &r) in counts.iter().zip(reward) {
        if *c == best {
            modes += 1;
            if r {
                correct += 1;
            }
        }
    }
    correct as f64 / modes as f64
}

/// Monte Carlo majority-vote accuracy; returns `(mean, standard error)`.
pub fn majority_mc<R: Rng + ?Sized>(
    probs: &[f64],
    reward: &[bool],
    n: u64,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if samples == 0 || n == 0 {
        return domain("majority MC needs samples >= 1 and N >= 1");
    }
    let sampler = Categorical::new(probs)?;
    let mut counts = vec![0usize; probs.len()];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        counts.iter_mut().for_each(|c| *c = 0);
        for _ in 0..n {
            counts[sampler.draw(rng)] += 1;
        }
        let v = plurality_correct_fraction(&counts, reward);
        sum += v;
        sum_sq += v * v;
    }
    let s = samples as f64;
    let mean = sum / s;
    let var = if samples > 1 {
        ((sum_sq - s * mean * mean) / (s - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok((mean, (var / s).sqrt()))
}

pub fn majority_vote_accuracy<R: Rng + ?Sized>(
    policy: &Policy,
    x: usize,
    task: &TaskInstance,
    n: u64,
    t: Temperature,
    mode: MajorityMode,
    rng: &mut R,
) -> Result<f64> {
    let probs = policy.prob_dist(x, t)?;
    match mode {
        MajorityMode::ExactSmall => majority_exact(&probs, &task.reward, n),
        MajorityMode::MonteCarlo { samples } => {
            Ok(majority_mc(&probs, &task.reward, n, samples, rng)?.0)
        }
    }
}

/// Exact BoN accuracy of one task: `sum_y pi_bon(y) R(y)`.
pub fn bon_accuracy(probs: &[f64], task: &TaskInstance, spec: &BonSpec) -> f64 {
    bon_dist(probs, &task.scores(spec.scorer), spec.n)
        .iter()
        .zip(&task.reward)
        .filter(|(_, &r)| r)
        .map(|(p, _)| p)
        .sum()
}

/// `J = sum_x P(x) sum_y pi_bon(y|x) R(x, y)`.
pub fn bon_expected_reward(policy: &Policy, bench: &Benchmark, spec: &BonSpec) -> Result<f64> {
    bench.check_policy(policy)?;
    let mut j = 0.0;
    for (x, (task, w)) in bench.tasks.iter().zip(&bench.weights).enumerate() {
        let probs = policy.prob_dist(x, spec.t)?;
        j += w * bon_accuracy(&probs, task, spec);
    }
    Ok(j)
}

/// Aggregate exact pass@N over the benchmark.
pub fn benchmark_pass_at_n(policy: &Policy, bench: &Benchmark, n: u64, t: Temperature) -> Result<f64> {
    bench.check_policy(policy)?;
    let mut acc = 0.0;
    for (x, (task, w)) in bench.tasks.iter().zip(&bench.weights).enumerate() {
        acc += w * pass_at_n(task.p_fail(&policy.prob_dist(x, t)?), n);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t1() -> Temperature {
        Temperature::ONE
    }

    fn two_answer_task() -> TaskInstance {
        TaskInstance::new(0, vec![true, false], vec![1.0, 0.0], vec![1.0, 0.0]).unwrap()
    }

    #[test]
    fn order_statistics_three_answers() {
        // brute force over the 9 ordered pairs
        let d = bon_dist(&[0.5, 0.3, 0.2], &[0.0, 1.0, 2.0], 2);
        let expect = [0.25, 0.39, 0.36];
        for (a, b) in d.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{d:?}");
        }
    }

    #[test]
    fn n1_is_identity() {
        let probs = [0.1, 0.6, 0.3];
        let d = bon_dist(&probs, &[3.0, 1.0, 2.0], 1);
        for (a, b) in d.iter().zip(probs) {
            assert!((a - b).abs() < 1e-15);
        }
        let b = binary_bon_dist(&probs, &[true, false, true], 1);
        assert_eq!(b, probs.to_vec());
    }

    #[test]
    fn binary_closed_form_cases() {
        let b = binary_bon_dist(&[0.5, 0.5], &[true, false], 2);
        assert_eq!(b, vec![0.75, 0.25]);
        let e = bon_dist(&[0.5, 0.5], &[1.0, 0.0], 2);
        assert!((e[0] - 0.75).abs() < 1e-15 && (e[1] - 0.25).abs() < 1e-15);

        let probs = [0.1, 0.9];
        let b = binary_bon_dist(&probs, &[true, false], 32);
        assert!((b[0] - (1.0 - 0.9f64.powi(32))).abs() < 1e-12);
        let e = bon_dist(&probs, &[1.0, 0.0], 32);
        assert!((b[0] - e[0]).abs() < 1e-12 && (b[1] - e[1]).abs() < 1e-12);
        assert!((b[0] - 0.9658).abs() < 1e-3);
    }

    #[test]
    fn binary_boundaries() {
        // all mass on correct answers
        let b = binary_bon_dist(&[0.4, 0.6, 0.0], &[true, true, false], 5);
        assert_eq!(b, vec![0.4, 0.6, 0.0]);
        // no correct mass
        let b = binary_bon_dist(&[0.0, 0.3, 0.7], &[true, false, false], 5);
        assert_eq!(b, vec![0.0, 0.3, 0.7]);
    }

    #[test]
    fn large_n_stays_normalised() {
        let probs = [0.2, 0.5, 0.3, 1e-9];
        let d = bon_dist(&probs, &[0.1, 0.3, 0.3, 5.0], 1 << 20);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unique_max_dominates_for_large_n() {
        let mut probs = vec![0.2];
        probs.extend(std::iter::repeat(0.8 / 7.0).take(7));
        let scores: Vec<f64> = (0..8).map(|i| if i == 0 { 10.0 } else { i as f64 }).collect();
        let d = bon_dist(&probs, &scores, 64);
        assert!((d[0] - (1.0 - 0.8f64.powi(64))).abs() < 1e-12);
        assert!(d[0] >= 0.9999);
    }

    #[test]
    fn win_rate_examples() {
        let probs = [0.5, 0.3, 0.2];
        let q = win_rates(&probs, &[0.0, 1.0, 2.0], WinMode::Hard);
        for (a, b) in q.iter().zip([0.5, 0.8, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let soft = win_rates(&probs, &[0.3, 0.3, 0.3], WinMode::Soft);
        assert!(soft.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let soft = win_rates(&probs, &[0.0, 100.0, 200.0], WinMode::Soft);
        for (y, (&s, &h)) in soft.iter().zip(&q).enumerate() {
            assert!((s - (h - 0.5 * probs[y])).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_win_rate_monotone_in_own_score() {
        let probs = [0.2, 0.3, 0.5];
        let mut prev = 0.0;
        for k in 0..50 {
            let r0 = -3.0 + 0.12 * k as f64;
            let q = win_rates(&probs, &[r0, 0.0, 1.0], WinMode::Soft)[0];
            assert!(q > prev);
            prev = q;
        }
    }

    #[test]
    fn win_rate_policy_wrappers() {
        let policy = Policy::tabular(1, 3, vec![1.0, 0.0, -1.0]).unwrap();
        let task = TaskInstance::new(0, vec![false, true, false], vec![0.0, 2.0, 1.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert!((win_rate(&policy, 0, &task, 1, t1(), Scorer::Verifier).unwrap() - 1.0).abs() < 1e-15);
        let probs = policy.prob_dist(0, t1()).unwrap();
        let q = win_rate(&policy, 0, &task, 0, t1(), Scorer::Verifier).unwrap();
        assert!((q - probs[0]).abs() < 1e-15);
        assert!(soft_win_rate(&policy, 0, &task, 3, t1(), Scorer::Verifier).is_err());
    }

    #[test]
    fn pass_at_n_examples() {
        assert!((pass_at_n(0.5, 3) - 0.875).abs() < 1e-15);
        assert!((pass_at_n(0.3, 1) - 0.7).abs() < 1e-15);
        let mut prev = 0.0;
        for n in 1..40 {
            let v = pass_at_n(0.83, n);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn unbiased_pass_examples() {
        assert!((pass_at_n_unbiased(4, 2, 2).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(pass_at_n_unbiased(10, 0, 3).unwrap(), 0.0);
        assert_eq!(pass_at_n_unbiased(10, 10, 3).unwrap(), 1.0);
        assert!(pass_at_n_unbiased(3, 4, 1).is_err());
        assert!(pass_at_n_unbiased(3, 1, 4).is_err());
    }

    #[test]
    fn majority_examples() {
        let v = majority_exact(&[0.6, 0.4], &[true, false], 3).unwrap();
        assert!((v - 0.648).abs() < 1e-15);
        let v = majority_exact(&[0.3, 0.2, 0.5], &[true, true, false], 1).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!(majority_exact(&[0.2; 5], &[true, false, false, false, false], 2).is_err());
        // N = 2 on two answers: a 1-1 split counts half
        let v = majority_exact(&[0.5, 0.5], &[true, false], 2).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn majority_mc_agrees_with_enumeration() {
        let probs = [0.35, 0.25, 0.3, 0.1];
        let reward = [true, false, false, true];
        for n in [2u64, 5, 8] {
            let exact = majority_exact(&probs, &reward, n).unwrap();
            let (mean, se) = majority_mc(&probs, &reward, n, 100_000, &mut ChaCha8Rng::seed_from_u64(n)).unwrap();
            assert!((mean - exact).abs() <= 4.0 * se, "n={n} exact={exact} mc={mean}±{se}");
        }
    }

    #[test]
    fn bon_sample_two_answer_brute_force() {
        let policy = Policy::uniform(1, 2).unwrap();
        let task = two_answer_task();
        let spec = BonSpec::new(2, t1(), Scorer::EnvReward).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| bon_sample(&policy, 0, &task, &spec, &mut rng).unwrap() == 0)
            .count();
        let sigma = (0.75f64 * 0.25 / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - 0.75).abs() <= 4.0 * sigma);
    }

    #[test]
    fn expected_reward_examples() {
        let policy = Policy::uniform(1, 2).unwrap();
        let bench = Benchmark::uniform(vec![two_answer_task()]).unwrap();
        let spec = BonSpec::new(2, t1(), Scorer::EnvReward).unwrap();
        assert!((bon_expected_reward(&policy, &bench, &spec).unwrap() - 0.75).abs() < 1e-15);
        let spec1 = BonSpec::new(1, t1(), Scorer::Verifier).unwrap();
        assert!((bon_expected_reward(&policy, &bench, &spec1).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn task_validation() {
        assert!(TaskInstance::new(1, vec![false, false], vec![0.0, 0.0], vec![0.5, 0.5]).is_err());
        assert!(TaskInstance::new(1, vec![true, false], vec![0.0, f64::NAN], vec![1.0, 0.0]).is_err());
        assert!(TaskInstance::new(1, vec![true, false], vec![0.0, 0.0], vec![0.5, 0.5]).is_err());
        assert!(BonSpec::new(0, t1(), Scorer::Verifier).is_err());
    }
}
