//! Synthetic tasks with a controllable failure rate and a frozen noisy
//! verifier.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bon::{Benchmark, TaskInstance};
use crate::error::{BonError, Result};
use crate::numeric::sigmoid;
use crate::policies::{Policy, Temperature};

/// Target initial `P_fail` per task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Difficulty {
    Uniform { lo: f64, hi: f64 },
    PointMass { p: f64 },
}

impl Difficulty {
    fn bounds(&self) -> (f64, f64) {
        match *self {
            Difficulty::Uniform { lo, hi } => (lo, hi),
            Difficulty::PointMass { p } => (p, p),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Difficulty::Uniform { lo, hi } if hi > lo => rng.gen_range(lo..hi),
            Difficulty::Uniform { lo, .. } => lo,
            Difficulty::PointMass { p } => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub num_contexts: usize,
    pub m: usize,
    pub difficulty: Difficulty,
    pub correct_count: usize,
    /// Zero gives a tabular policy; otherwise a linear-softmax policy over
    /// this many random features plus one feature carrying the init logit.
    pub feature_dim: usize,
    /// Standard deviation of the random base logits before the difficulty
    /// offset.
    pub logit_scale: f64,
    pub seed: u64,
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_contexts == 0 {
            return Err(BonError::Spec("bench.num_contexts must be >= 1".into()));
        }
        if !(1 <= self.correct_count && self.correct_count < self.m) {
            return Err(BonError::Spec(format!(
                "bench.correct_count must satisfy 1 <= correct_count < m = {}, got {}",
                self.m, self.correct_count
            )));
        }
        let (lo, hi) = self.difficulty.bounds();
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(BonError::Spec(format!(
                "difficulty range [{lo}, {hi}] is infeasible: every target P_fail must lie in (0, 1) for finite logits"
            )));
        }
        if !(self.logit_scale >= 0.0 && self.logit_scale.is_finite()) {
            return Err(BonError::Spec("bench.logit_scale must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Calibration {
    Raw,
    Logistic,
}

/// `r = beta R + sigma eps`, optionally passed through a logistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifierSpec {
    pub fidelity: f64,
    pub noise_sigma: f64,
    pub calibration: Calibration,
}

impl VerifierSpec {
    pub fn perfect() -> Self {
        VerifierSpec {
            fidelity: 1.0,
            noise_sigma: 0.0,
            calibration: Calibration::Raw,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fidelity >= 0.0 && self.fidelity.is_finite()) {
            return Err(BonError::Spec("verifier.fidelity must be finite and >= 0".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(BonError::Spec("verifier.noise_sigma must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Scores from rewards and standard-normal noise.
    pub fn scores(&self, reward: &[bool], noise: &[f64]) -> Vec<f64> {
        reward
            .iter()
            .zip(noise)
            .map(|(&r, e)| {
                let raw = self.fidelity * if r { 1.0 } else { 0.0 } + self.noise_sigma * e;
                match self.calibration {
                    Calibration::Raw => raw,
                    Calibration::Logistic => sigmoid(raw),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub benchmark: Benchmark,
    pub policy: Policy,
    /// Drawn target `P_fail` per task.
    pub targets: Vec<f64>,
    /// Standard-normal verifier noise per task, kept so the verifier can be
    /// rebuilt at other settings with common random numbers.
    pub noise: Vec<Vec<f64>>,
}

/// Largest allowed gap between a task's realised initial `P_fail` and its
/// target.
pub const DIFFICULTY_TOL: f64 = 1e-9;

/// Draws a benchmark and an initial policy from `spec.seed`.
///
/// Each task gets random base logits; the correct answers are then shifted by
/// the offset `delta = ln(W (1 - p) / (p C))`, where `W` and `C` are the
/// wrong and correct exponentiated logit masses, which puts the `T = 1`
/// failure probability at the target `p`.
pub fn generate_benchmark(spec: &BenchSpec, vspec: &VerifierSpec) -> Result<Generated> {
    spec.validate()?;
    vspec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.m;
    let mut tasks = Vec::with_capacity(spec.num_contexts);
    let mut logits = Vec::with_capacity(spec.num_contexts * m);
    let mut targets = Vec::with_capacity(spec.num_contexts);
    let mut noise_all = Vec::with_capacity(spec.num_contexts);
    for id in 0..spec.num_contexts {
        let target = spec.difficulty.draw(&mut rng);
        let mut reward = vec![false; m];
        for y in sample(&mut rng, m, spec.correct_count) {
            reward[y] = true;
        }
        let base: Vec<f64> = (0..m)
            .map(|_| spec.logit_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let noise: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();

        let top = base.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut wrong, mut correct) = (0.0, 0.0);
        for (y, b) in base.iter().enumerate() {
            let e = (b - top).exp();
            if reward[y] {
                correct += e;
            } else {
                wrong += e;
            }
        }
        let delta = (wrong * (1.0 - target) / (target * correct)).ln();
        let mut task_logits: Vec<f64> = base
            .iter()
            .zip(&reward)
            .map(|(b, &r)| if r { b + delta } else { *b })
            .collect();
        let mean = task_logits.iter().sum::<f64>() / m as f64;
        for l in &mut task_logits {
            *l -= mean;
        }

        let verifier = vspec.scores(&reward, &noise);
        let expert = reward
            .iter()
            .map(|&r| if r { 1.0 / spec.correct_count as f64 } else { 0.0 })
            .collect();
        tasks.push(TaskInstance::new(id as u64, reward, verifier, expert)?);
        logits.extend(task_logits);
        targets.push(target);
        noise_all.push(noise);
    }

    let policy = if spec.feature_dim == 0 {
        Policy::tabular(spec.num_contexts, m, logits)?
    } else {
        let d = spec.feature_dim;
        let scale = 1.0 / (d as f64).sqrt();
        let features: Vec<Vec<f64>> = logits
            .iter()
            .map(|&l| {
                let mut f: Vec<f64> = (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
                f.push(l);
                f
            })
            .collect();
        let mut theta = vec![0.0; d + 1];
        theta[d] = 1.0;
        Policy::linear_softmax(spec.num_contexts, m, features, theta)?
    };

    let benchmark = Benchmark::uniform(tasks)?;
    for (x, (task, target)) in benchmark.tasks.iter().zip(&targets).enumerate() {
        let realised = task.p_fail(&policy.prob_dist(x, Temperature::ONE)?);
        if (realised - target).abs() > DIFFICULTY_TOL {
            return Err(BonError::Numerical(format!(
                "task {}: realised P_fail {realised} misses target {target}",
                task.id
            )));
        }
    }
    Ok(Generated {
        benchmark,
        policy,
        targets,
        noise: noise_all,
    })
}

/// Same tasks and frozen noise, scores rebuilt under another verifier.
pub fn rescore(generated: &Generated, vspec: &VerifierSpec) -> Result<Benchmark> {
    vspec.validate()?;
    let tasks = generated
        .benchmark
        .tasks
        .iter()
        .zip(&generated.noise)
        .map(|(t, noise)| TaskInstance::new(t.id, t.reward.clone(), vspec.scores(&t.reward, noise), t.expert.clone()))
        .collect::<Result<Vec<_>>>()?;
    Benchmark::new(tasks, generated.benchmark.weights.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorRates {
    /// `P(r(y) < threshold | y correct)` under the policy.
    pub type1: f64,
    /// Probability that a wrong answer outscores a correct one, for a wrong
    /// and a correct answer drawn independently from the policy; ties count
    /// one half.
    pub type2: f64,
}

/// Per-task verifier error rates by exact summation. Tasks without wrong or
/// without correct probability mass report zero for the affected rate.
pub fn verifier_error_rates(
    bench: &Benchmark,
    policy: &Policy,
    t: Temperature,
    threshold: f64,
) -> Result<Vec<ErrorRates>> {
    bench.check_policy(policy)?;
    bench
        .tasks
        .iter()
        .enumerate()
        .map(|(x, task)| {
            let probs = policy.prob_dist(x, t)?;
            let (mut pc, mut pw, mut rejected, mut inverted) = (0.0, 0.0, 0.0, 0.0);
            for (c, &rc) in task.reward.iter().enumerate() {
                if rc {
                    pc += probs[c];
                    if task.verifier[c] < threshold {
                        rejected += probs[c];
                    }
                } else {
                    pw += probs[c];
                }
            }
            for (w, &rw) in task.reward.iter().enumerate() {
                if rw {
                    continue;
                }
                for (c, &rc) in task.reward.iter().enumerate() {
                    if !rc {
                        continue;
                    }
                    let k = if task.verifier[w] > task.verifier[c] {
                        1.0
                    } else if task.verifier[w] == task.verifier[c] {
                        0.5
                    } else {
                        0.0
                    };
                    inverted += probs[w] * probs[c] * k;
                }
            }
            Ok(ErrorRates {
                type1: if pc > 0.0 { rejected / pc } else { 0.0 },
                type2: if pc > 0.0 && pw > 0.0 { inverted / (pc * pw) } else { 0.0 },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(difficulty: Difficulty) -> BenchSpec {
        BenchSpec {
            num_contexts: 12,
            m: 6,
            difficulty,
            correct_count: 2,
            feature_dim: 0,
            logit_scale: 1.0,
            seed: 9,
        }
    }

    #[test]
    fn targets_hit() {
        let g = generate_benchmark(&spec(Difficulty::Uniform { lo: 0.3, hi: 0.95 }), &VerifierSpec::perfect()).unwrap();
        for (x, t) in g.targets.iter().enumerate() {
            let p = g.benchmark.tasks[x].p_fail(&g.policy.prob_dist(x, Temperature::ONE).unwrap());
            assert!((p - t).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_softmax_targets_hit() {
        let mut s = spec(Difficulty::Uniform { lo: 0.5, hi: 0.9 });
        s.feature_dim = 5;
        let g = generate_benchmark(&s, &VerifierSpec::perfect()).unwrap();
        assert_eq!(g.policy.feature_dim(), 6);
    }

    #[test]
    fn uniform_two_answer_case() {
        let mut s = spec(Difficulty::PointMass { p: 0.5 });
        s.m = 2;
        s.correct_count = 1;
        let g = generate_benchmark(&s, &VerifierSpec::perfect()).unwrap();
        for x in 0..s.num_contexts {
            let p = g.policy.prob_dist(x, Temperature::ONE).unwrap();
            assert!((p[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn infeasible_specs_rejected() {
        assert!(generate_benchmark(&spec(Difficulty::PointMass { p: 0.0 }), &VerifierSpec::perfect()).is_err());
        assert!(generate_benchmark(&spec(Difficulty::PointMass { p: 1.0 }), &VerifierSpec::perfect()).is_err());
        let mut s = spec(Difficulty::PointMass { p: 0.5 });
        s.correct_count = 6;
        assert!(matches!(generate_benchmark(&s, &VerifierSpec::perfect()), Err(BonError::Spec(_))));
    }

    #[test]
    fn same_seed_same_benchmark() {
        let s = spec(Difficulty::Uniform { lo: 0.3, hi: 0.9 });
        let v = VerifierSpec {
            fidelity: 1.0,
            noise_sigma: 0.5,
            calibration: Calibration::Raw,
        };
        let a = generate_benchmark(&s, &v).unwrap();
        let b = generate_benchmark(&s, &v).unwrap();
        assert_eq!(a.benchmark, b.benchmark);
        assert_eq!(a.policy.theta(), b.policy.theta());
    }
}
