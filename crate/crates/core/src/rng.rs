//! Keyed random streams.
//!
//! Every random draw belongs to a stream named by `(purpose, task, step)`
//! under a master seed. The stream seed is the SHA-256 of the key, so a
//! stream never depends on which other streams were used or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Sentinel task id for streams not tied to one task.
pub const ALL_TASKS: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngContract {
    pub master_seed: u64,
}

impl RngContract {
    pub fn new(master_seed: u64) -> Self {
        RngContract { master_seed }
    }

    pub fn stream(&self, purpose: &str, task: u64, step: u64) -> ChaCha8Rng {
        stream(self.master_seed, purpose, task, step)
    }
}

pub fn stream(master_seed: u64, purpose: &str, task: u64, step: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"bonlab-rng-v1");
    h.update(master_seed.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    h.update(task.to_le_bytes());
    h.update(step.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}
