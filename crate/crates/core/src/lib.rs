//! Best-of-N inference-aware fine-tuning laboratory.
//!
//! Exact and sampled Best-of-N (BoN) selection distributions, the tilted
//! variational approximation, BoN-aware policy-gradient estimators, training
//! loops, synthetic verification benchmarks and an `(N, T)` co-scaling
//! analyzer. Every closed form has a brute-force counterpart in [`oracle`].

pub mod bon;
pub mod coscale;
pub mod checks;
pub mod error;
pub mod estimators;
pub mod formats;
pub mod numeric;
pub mod oracle;
pub mod policies;
pub mod rng;
pub mod synthbench;
pub mod training;
pub mod variational;

pub use error::{BonError, Result};
