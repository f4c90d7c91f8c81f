//! Experiment configuration: a TOML file with the sections `[bench]`,
//! `[verifier]`, `[train]`, `[eval]`, `[coscale]` and `[rng]`. Every key is
//! required and unknown keys are rejected, so a typo cannot silently fall
//! back to a default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bonlab::bon::Scorer;
use bonlab::estimators::PFailSource;
use bonlab::synthbench::{BenchSpec, Calibration, Difficulty, VerifierSpec};
use bonlab::training::{LambdaChoice, Method, TrainConfig, TrainMode};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("missing key {0}")]
    Missing(String),
    #[error("unknown key {0}")]
    Unknown(String),
    #[error("bad override `{0}`: expected section.key=value")]
    Override(String),
    #[error("invalid value for {key}: {msg}")]
    Invalid { key: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub num_contexts: usize,
    pub m: usize,
    pub difficulty_lo: f64,
    pub difficulty_hi: f64,
    pub correct_count: usize,
    pub feature_dim: usize,
    pub logit_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierSection {
    pub fidelity: f64,
    pub noise_sigma: f64,
    pub calibration: Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
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
    pub pfail_clip: [f64; 2],
    pub mode: TrainMode,
    /// 0 evaluates at `n_prime`.
    pub eval_n: u64,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub lambda: LambdaChoice,
    pub pfail_source: PFailSource,
    pub baseline_lr: f64,
    pub normalize_advantages: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MajorityChoice {
    None,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub n_grid: Vec<u64>,
    pub t_grid: Vec<f64>,
    pub scorer: Scorer,
    pub majority: MajorityChoice,
    pub majority_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoscaleSection {
    pub n_grid: Vec<u64>,
    pub t_grid: Vec<f64>,
    /// Temperatures held out of the trend fits and reported as extrapolations.
    pub holdout_t: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngSection {
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub bench: BenchSection,
    pub verifier: VerifierSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub coscale: CoscaleSection,
    pub rng: RngSection,
}

/// The shipped `default.cfg`.
pub const DEFAULT_CONFIG: &str = include_str!("../default.cfg");

impl Config {
    pub fn parse_str(text: &str, origin: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: origin.to_string(),
            msg: e.to_string(),
        })?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        check_keys(&table)?;
        let cfg: Config = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: origin.to_string(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse_str(&text, &path.display().to_string(), overrides)
    }

    #[cfg(test)]
    pub fn default_config() -> Self {
        Self::parse_str(DEFAULT_CONFIG, "default.cfg", &[]).expect("shipped default.cfg is valid")
    }

    pub fn to_canonical_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical serialisation, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn bench_spec(&self) -> BenchSpec {
        let b = &self.bench;
        BenchSpec {
            num_contexts: b.num_contexts,
            m: b.m,
            difficulty: if b.difficulty_lo == b.difficulty_hi {
                Difficulty::PointMass { p: b.difficulty_lo }
            } else {
                Difficulty::Uniform {
                    lo: b.difficulty_lo,
                    hi: b.difficulty_hi,
                }
            },
            correct_count: b.correct_count,
            feature_dim: b.feature_dim,
            logit_scale: b.logit_scale,
            seed: self.rng.seed,
        }
    }

    pub fn verifier_spec(&self) -> VerifierSpec {
        VerifierSpec {
            fidelity: self.verifier.fidelity,
            noise_sigma: self.verifier.noise_sigma,
            calibration: self.verifier.calibration,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            method: t.method,
            n_prime: t.n_prime,
            t_prime: t.t_prime,
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.lr,
            kl_coef_start: t.kl_coef_start,
            kl_coef_end: t.kl_coef_end,
            kl_anneal_steps: t.kl_anneal_steps,
            kl_anneal_delay: t.kl_anneal_delay,
            anchor_ema: t.anchor_ema,
            pfail_clip: (t.pfail_clip[0], t.pfail_clip[1]),
            seed: self.rng.seed,
            mode: t.mode,
            eval_n: (t.eval_n > 0).then_some(t.eval_n),
            eval_every: t.eval_every,
            checkpoint_every: t.checkpoint_every,
            lambda: t.lambda,
            pfail_source: t.pfail_source,
            baseline_lr: t.baseline_lr,
            normalize_advantages: t.normalize_advantages,
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, e: bonlab::BonError| ConfigError::Invalid {
            key: key.to_string(),
            msg: e.to_string(),
        };
        self.bench_spec().validate().map_err(|e| invalid("bench", e))?;
        self.verifier_spec().validate().map_err(|e| invalid("verifier", e))?;
        self.train_config().validate().map_err(|e| invalid("train", e))?;
        for (key, ns, ts) in [
            ("eval", &self.eval.n_grid, &self.eval.t_grid),
            ("coscale", &self.coscale.n_grid, &self.coscale.t_grid),
        ] {
            if ns.is_empty() || ns.contains(&0) || ns.windows(2).any(|w| w[0] >= w[1]) {
                return Err(ConfigError::Invalid {
                    key: format!("{key}.n_grid"),
                    msg: "must be a strictly increasing list of positive integers".into(),
                });
            }
            if ts.is_empty() || ts.iter().any(|t| !(*t > 0.0 && t.is_finite())) || ts.windows(2).any(|w| w[0] >= w[1]) {
                return Err(ConfigError::Invalid {
                    key: format!("{key}.t_grid"),
                    msg: "must be a strictly increasing list of positive temperatures".into(),
                });
            }
        }
        if self.eval.majority == MajorityChoice::MonteCarlo && self.eval.majority_samples == 0 {
            return Err(ConfigError::Invalid {
                key: "eval.majority_samples".into(),
                msg: "must be >= 1 for monte-carlo majority".into(),
            });
        }
        Ok(())
    }
}

/// Key lists per section, read off the shipped config.
fn expected_keys() -> Vec<(String, Vec<String>)> {
    let table: toml::Table = DEFAULT_CONFIG.parse().expect("shipped default.cfg parses");
    table
        .iter()
        .map(|(s, v)| {
            let keys = v.as_table().map(|t| t.keys().cloned().collect()).unwrap_or_default();
            (s.clone(), keys)
        })
        .collect()
}

fn check_keys(table: &toml::Table) -> Result<(), ConfigError> {
    let expected = expected_keys();
    for key in table.keys() {
        if !expected.iter().any(|(s, _)| s == key) {
            return Err(ConfigError::Unknown(key.clone()));
        }
    }
    for (section, keys) in &expected {
        let Some(present) = table.get(section) else {
            return Err(ConfigError::Missing(section.clone()));
        };
        let Some(present) = present.as_table() else {
            return Err(ConfigError::Invalid {
                key: section.clone(),
                msg: "expected a table".into(),
            });
        };
        for k in present.keys() {
            if !keys.contains(k) {
                return Err(ConfigError::Unknown(format!("{section}.{k}")));
            }
        }
        for k in keys {
            if !present.contains_key(k) {
                return Err(ConfigError::Missing(format!("{section}.{k}")));
            }
        }
    }
    Ok(())
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let (section, key) = path.trim().split_once('.').ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let section = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match section.as_table_mut() {
        Some(t) => {
            t.insert(key.to_string(), value);
            Ok(())
        }
        None => Err(ConfigError::Override(spec.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = Config::default_config();
        let again = Config::parse_str(&cfg.to_canonical_string(), "canonical", &[]).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
    }

    #[test]
    fn missing_key_is_named() {
        let text = DEFAULT_CONFIG.replace("anchor_ema", "# anchor_ema");
        let err = Config::parse_str(&text, "x", &[]).unwrap_err();
        assert_eq!(err.to_string(), "missing key train.anchor_ema");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = Config::parse_str(DEFAULT_CONFIG, "x", &["train.learning_rate=0.1".into()]).unwrap_err();
        assert_eq!(err.to_string(), "unknown key train.learning_rate");
    }

    #[test]
    fn override_changes_hash() {
        let base = Config::default_config();
        let o = Config::parse_str(DEFAULT_CONFIG, "x", &["train.n_prime=32".into()]).unwrap();
        assert_eq!(o.train.n_prime, 32);
        assert_ne!(base.hash(), o.hash());
        let m = Config::parse_str(DEFAULT_CONFIG, "x", &["train.method=rl-s".into()]).unwrap();
        assert_eq!(m.train.method, Method::RlS);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(Config::parse_str(DEFAULT_CONFIG, "x", &["train.anchor_ema=0".into()]).is_err());
        assert!(Config::parse_str(DEFAULT_CONFIG, "x", &["eval.n_grid=[4, 2]".into()]).is_err());
        assert!(Config::parse_str(DEFAULT_CONFIG, "x", &["train.method=ppo".into()]).is_err());
    }
}
