//! Policy families over a finite answer set.
//!
//! Two parameterizations share one interface: a tabular policy holds one
//! logit per (context, answer), a linear-softmax policy scores each
//! (context, answer) pair by `theta · phi(x, y)` over a fixed feature table.
//! Temperature divides the logits before the softmax, so
//! `pi_T(y|x) = softmax(logits(x) / T)_y`.

use std::fmt::Write as _;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{domain, BonError, Result};
use crate::numeric::fmt17;

/// Sampling temperature, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Temperature(value))
        } else {
            domain(format!("temperature must be finite and > 0, got {value}"))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Tabular,
    LinearSoftmax,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Tabular => "tabular",
            PolicyKind::LinearSoftmax => "linear-softmax",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tabular" => Ok(PolicyKind::Tabular),
            "linear-softmax" => Ok(PolicyKind::LinearSoftmax),
            other => domain(format!("unknown policy kind `{other}`")),
        }
    }
}

/// A softmax policy `pi_theta(y|x)` over `m` answers for each of
/// `num_contexts` contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    kind: PolicyKind,
    theta: Vec<f64>,
    /// Row-major `[context][answer][feature]`, linear-softmax only.
    features: Option<Vec<f64>>,
    feature_dim: usize,
    num_contexts: usize,
    m: usize,
}

impl Policy {
    pub fn tabular(num_contexts: usize, m: usize, theta: Vec<f64>) -> Result<Self> {
        if num_contexts == 0 || m == 0 {
            return domain("policy needs at least one context and one answer");
        }
        if theta.len() != num_contexts * m {
            return domain(format!(
                "tabular theta has {} entries, expected {} x {}",
                theta.len(),
                num_contexts,
                m
            ));
        }
        Ok(Policy {
            kind: PolicyKind::Tabular,
            theta,
            features: None,
            feature_dim: 0,
            num_contexts,
            m,
        })
    }

    /// Uniform tabular policy (all logits zero).
    pub fn uniform(num_contexts: usize, m: usize) -> Result<Self> {
        Self::tabular(num_contexts, m, vec![0.0; num_contexts * m])
    }

    /// `features` is indexed `[x * m + y]`, every row of equal length.
    pub fn linear_softmax(
        num_contexts: usize,
        m: usize,
        features: Vec<Vec<f64>>,
        theta: Vec<f64>,
    ) -> Result<Self> {
        if num_contexts == 0 || m == 0 {
            return domain("policy needs at least one context and one answer");
        }
        if features.len() != num_contexts * m {
            return domain(format!(
                "feature table has {} rows, expected {}",
                features.len(),
                num_contexts * m
            ));
        }
        let dim = theta.len();
        if dim == 0 {
            return domain("linear-softmax theta must be non-empty");
        }
        if let Some(bad) = features.iter().position(|row| row.len() != dim) {
            return domain(format!(
                "feature row {bad} has dimension {}, theta has {dim}",
                features[bad].len()
            ));
        }
        Ok(Policy {
            kind: PolicyKind::LinearSoftmax,
            theta,
            features: Some(features.into_iter().flatten().collect()),
            feature_dim: dim,
            num_contexts,
            m,
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    pub fn answers(&self) -> usize {
        self.m
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Feature vector of `(x, y)`; `None` for tabular policies.
    pub fn feature(&self, x: usize, y: usize) -> Option<&[f64]> {
        let d = self.feature_dim;
        self.features
            .as_ref()
            .map(|f| &f[(x * self.m + y) * d..(x * self.m + y + 1) * d])
    }

    /// Same family and features, new parameters.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return domain(format!(
                "theta has {} entries, policy expects {}",
                theta.len(),
                self.theta.len()
            ));
        }
        let mut p = self.clone();
        p.theta = theta;
        Ok(p)
    }

    fn check_context(&self, x: usize) -> Result<()> {
        if x < self.num_contexts {
            Ok(())
        } else {
            domain(format!(
                "context {x} out of range (num_contexts = {})",
                self.num_contexts
            ))
        }
    }

    /// Unscaled logits of context `x`.
    pub fn logits(&self, x: usize) -> Result<Vec<f64>> {
        self.check_context(x)?;
        Ok(match self.kind {
            PolicyKind::Tabular => self.theta[x * self.m..(x + 1) * self.m].to_vec(),
            PolicyKind::LinearSoftmax => (0..self.m)
                .map(|y| {
                    let phi = self.feature(x, y).expect("linear policy has features");
                    phi.iter().zip(&self.theta).map(|(a, b)| a * b).sum()
                })
                .collect(),
        })
    }

    pub fn prob_dist(&self, x: usize, t: Temperature) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?, t))
    }

    pub fn log_prob_dist(&self, x: usize, t: Temperature) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.logits(x)?, t))
    }

    /// `grad_theta log pi_T(y|x)`, including the `1/T` factor.
    pub fn grad_log_prob(&self, x: usize, y: usize, t: Temperature) -> Result<Vec<f64>> {
        if y >= self.m {
            return domain(format!("answer {y} out of range (m = {})", self.m));
        }
        let probs = self.prob_dist(x, t)?;
        let mut coeffs = vec![0.0; self.m];
        coeffs[y] = 1.0;
        let mut out = vec![0.0; self.dim()];
        self.accumulate_score(x, &probs, &coeffs, t, &mut out);
        Ok(out)
    }

    /// Adds `sum_y coeffs[y] * grad log pi_T(y|x)` into `out`.
    ///
    /// `probs` must be `prob_dist(x, t)`. Every exact-expectation estimator
    /// reduces to a coefficient vector per context, so this is the single
    /// place where the parameterization's Jacobian is applied.
    pub fn accumulate_score(
        &self,
        x: usize,
        probs: &[f64],
        coeffs: &[f64],
        t: Temperature,
        out: &mut [f64],
    ) {
        debug_assert_eq!(probs.len(), self.m);
        debug_assert_eq!(coeffs.len(), self.m);
        let inv_t = 1.0 / t.value();
        let total: f64 = coeffs.iter().sum();
        match self.kind {
            PolicyKind::Tabular => {
                let row = &mut out[x * self.m..(x + 1) * self.m];
                for ((o, &c), &p) in row.iter_mut().zip(coeffs).zip(probs) {
                    *o += inv_t * (c - total * p);
                }
            }
            PolicyKind::LinearSoftmax => {
                for y in 0..self.m {
                    let w = inv_t * (coeffs[y] - total * probs[y]);
                    if w != 0.0 {
                        let phi = self.feature(x, y).expect("linear policy has features");
                        for (o, f) in out.iter_mut().zip(phi) {
                            *o += w * f;
                        }
                    }
                }
            }
        }
    }

    /// `n` i.i.d. draws from `prob_dist(x, t)`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        x: usize,
        t: Temperature,
        rng: &mut R,
        n: usize,
    ) -> Result<Vec<usize>> {
        if n == 0 {
            return domain("sample count must be >= 1");
        }
        let probs = self.prob_dist(x, t)?;
        let sampler = Categorical::new(&probs)?;
        Ok((0..n).map(|_| sampler.draw(rng)).collect())
    }

    /// Plain-text checkpoint, 17 significant digits per parameter.
    pub fn to_checkpoint_string(&self) -> String {
        let mut s = format!(
            "bonlab-policy v1 {} {} {} {}\n",
            self.kind.as_str(),
            self.num_contexts,
            self.m,
            self.theta.len()
        );
        for v in &self.theta {
            let _ = writeln!(s, "{}", fmt17(*v));
        }
        if let Some(features) = &self.features {
            let _ = writeln!(
                s,
                "features {} {}",
                self.num_contexts * self.m,
                self.feature_dim
            );
            for row in features.chunks(self.feature_dim) {
                let line: Vec<String> = row.iter().map(|v| fmt17(*v)).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
        }
        s
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (ln, header) = lines.next().ok_or(BonError::Format {
            line: 1,
            msg: "empty checkpoint".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "bonlab-policy" || fields[1] != "v1" {
            return Err(BonError::Format {
                line: ln,
                msg: format!("bad checkpoint header `{header}`"),
            });
        }
        let kind = PolicyKind::parse(fields[2]).map_err(|e| BonError::Format {
            line: ln,
            msg: e.to_string(),
        })?;
        let parse_usize = |s: &str| {
            s.parse::<usize>().map_err(|e| BonError::Format {
                line: ln,
                msg: format!("`{s}`: {e}"),
            })
        };
        let num_contexts = parse_usize(fields[3])?;
        let m = parse_usize(fields[4])?;
        let len = parse_usize(fields[5])?;
        let mut theta = Vec::with_capacity(len);
        for _ in 0..len {
            let (ln, l) = lines.next().ok_or(BonError::Format {
                line: ln + theta.len() + 1,
                msg: "truncated parameter list".into(),
            })?;
            theta.push(parse_f64(l.trim(), ln)?);
        }
        match kind {
            PolicyKind::Tabular => Policy::tabular(num_contexts, m, theta),
            PolicyKind::LinearSoftmax => {
                let (ln, l) = lines.next().ok_or(BonError::Format {
                    line: ln + len + 1,
                    msg: "missing feature block".into(),
                })?;
                let f: Vec<&str> = l.split_whitespace().collect();
                if f.len() != 3 || f[0] != "features" {
                    return Err(BonError::Format {
                        line: ln,
                        msg: format!("expected `features <rows> <dim>`, got `{l}`"),
                    });
                }
                let rows = parse_usize(f[1])?;
                let mut features = Vec::with_capacity(rows);
                for _ in 0..rows {
                    let (ln, l) = lines.next().ok_or(BonError::Format {
                        line: ln + features.len() + 1,
                        msg: "truncated feature block".into(),
                    })?;
                    let row = l
                        .split_whitespace()
                        .map(|v| parse_f64(v, ln))
                        .collect::<Result<Vec<f64>>>()?;
                    features.push(row);
                }
                Policy::linear_softmax(num_contexts, m, features, theta)
            }
        }
    }

    pub fn write_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn read_checkpoint(path: &Path) -> Result<Self> {
        Self::from_checkpoint_str(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|e| BonError::Format {
        line,
        msg: format!("`{s}`: {e}"),
    })
}

/// `softmax(logits / t)` with max-subtraction.
pub fn softmax(logits: &[f64], t: Temperature) -> Vec<f64> {
    let inv_t = 1.0 / t.value();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| ((l - max) * inv_t).exp()).collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    out
}

pub fn log_softmax(logits: &[f64], t: Temperature) -> Vec<f64> {
    let inv_t = 1.0 / t.value();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|l| (l - max) * inv_t).collect();
    let log_z = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|s| s - log_z).collect()
}

/// Categorical sampler over a fixed probability vector.
#[derive(Debug, Clone)]
pub struct Categorical {
    index: WeightedIndex<f64>,
}

impl Categorical {
    pub fn new(probs: &[f64]) -> Result<Self> {
        WeightedIndex::new(probs)
            .map(|index| Categorical { index })
            .map_err(|e| BonError::Domain(format!("invalid probability vector: {e}")))
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(v: f64) -> Temperature {
        Temperature::new(v).unwrap()
    }

    #[test]
    fn symmetric_logits_give_uniform() {
        let p = Policy::tabular(1, 2, vec![0.0, 0.0]).unwrap();
        assert_eq!(p.prob_dist(0, t(1.0)).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn ln2_logit_gap() {
        let p = Policy::tabular(1, 2, vec![2f64.ln(), 0.0]).unwrap();
        let d = p.prob_dist(0, t(1.0)).unwrap();
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d[1] - 1.0 / 3.0).abs() < 1e-15);
        let hot = p.prob_dist(0, t(1e6)).unwrap();
        assert!((hot[0] - 0.5).abs() < 1e-6 && (hot[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn domain_errors() {
        let p = Policy::uniform(2, 3).unwrap();
        assert!(p.prob_dist(2, t(1.0)).is_err());
        assert!(Temperature::new(0.0).is_err());
        assert!(Temperature::new(-1.0).is_err());
        assert!(Temperature::new(f64::NAN).is_err());
        assert!(p.grad_log_prob(0, 3, t(1.0)).is_err());
        assert!(Policy::tabular(2, 3, vec![0.0; 5]).is_err());
    }

    #[test]
    fn uniform_score_entries() {
        let p = Policy::uniform(3, 2).unwrap();
        let g = p.grad_log_prob(1, 0, t(1.0)).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.5, -0.5, 0.0, 0.0]);
    }

    #[test]
    fn temperature_scales_score() {
        let p = Policy::uniform(1, 2).unwrap();
        let g = p.grad_log_prob(0, 0, t(2.0)).unwrap();
        assert_eq!(g, vec![0.25, -0.25]);
    }

    #[test]
    fn degenerate_policy_samples_argmax() {
        let p = Policy::tabular(1, 3, vec![0.0, 100.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for temp in [0.1, 0.5, 1.0] {
            let s = p.sample(0, t(temp), &mut rng, 1000).unwrap();
            assert!(s.iter().all(|&y| y == 1));
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let p = Policy::tabular(1, 4, vec![0.1, 0.2, -0.3, 0.0]).unwrap();
        let a = p.sample(0, t(1.0), &mut ChaCha8Rng::seed_from_u64(11), 64).unwrap();
        let b = p.sample(0, t(1.0), &mut ChaCha8Rng::seed_from_u64(11), 64).unwrap();
        assert_eq!(a, b);
        assert!(p.sample(0, t(1.0), &mut ChaCha8Rng::seed_from_u64(11), 0).is_err());
    }

    #[test]
    fn uniform_frequencies_concentrate() {
        let m = 5;
        let n = 100_000;
        let p = Policy::uniform(1, m).unwrap();
        let s = p.sample(0, t(1.0), &mut ChaCha8Rng::seed_from_u64(3), n).unwrap();
        let mut counts = vec![0usize; m];
        for y in s {
            counts[y] += 1;
        }
        let q = 1.0 / m as f64;
        let sigma = (q * (1.0 - q) / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - q).abs() <= 4.0 * sigma);
        }
    }

    #[test]
    fn checkpoint_round_trip_linear() {
        let features = vec![
            vec![1.0, 0.5],
            vec![-0.25, 2.0],
            vec![0.1, 0.2],
            vec![0.3, -0.7],
        ];
        let p = Policy::linear_softmax(2, 2, features, vec![0.1 + 0.2, -1.0 / 3.0]).unwrap();
        let text = p.to_checkpoint_string();
        assert!(text.starts_with("bonlab-policy v1 linear-softmax 2 2 2\n"));
        let q = Policy::from_checkpoint_str(&text).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn checkpoint_rejects_bad_header() {
        let err = Policy::from_checkpoint_str("bonlab-policy v2 tabular 1 2 2\n0\n0\n").unwrap_err();
        assert!(matches!(err, BonError::Format { line: 1, .. }));
        let err = Policy::from_checkpoint_str("bonlab-policy v1 tabular 1 2 2\n0\n").unwrap_err();
        assert!(matches!(err, BonError::Format { .. }));
    }
}
