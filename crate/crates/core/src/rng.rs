//! Seeded random source for mutation.
//!
//! ChaCha8 keyed through `seed_from_u64`, sampled only through fixed-width
//! integer and `f64` draws so a seed produces the same stream on every
//! platform. Golden tests in `mutation` pin the observable sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct FuzzRng {
    inner: ChaCha8Rng,
}

impl FuzzRng {
    pub fn seed_from_u64(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Per-task stream: the first 8 bytes of SHA-256 over the global seed
    /// (little-endian) followed by the task id, read little-endian.
    pub fn for_task(global_seed: u64, task_id: &str) -> Self {
        Self::seed_from_u64(derive_task_seed(global_seed, task_id))
    }

    /// Uniform in `0..n`. `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        self.inner.gen_range(0..n)
    }

    /// Uniform index in `0..len`.
    pub fn index(&mut self, len: usize) -> usize {
        self.below(len as u64) as usize
    }

    /// Uniform in the inclusive range.
    pub fn between(&mut self, lo: u64, hi: u64) -> u64 {
        self.inner.gen_range(lo..=hi)
    }

    pub fn coin(&mut self) -> bool {
        self.inner.gen_range(0u32..2) == 1
    }

    /// True with probability `numer / denom`.
    pub fn chance(&mut self, numer: u64, denom: u64) -> bool {
        self.below(denom) < numer
    }

    /// Uniform in the half-open interval (0, 1].
    pub fn unit_open_closed(&mut self) -> f64 {
        1.0 - self.inner.gen::<f64>()
    }
}

pub fn derive_task_seed(global_seed: u64, task_id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update(task_id.as_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}
