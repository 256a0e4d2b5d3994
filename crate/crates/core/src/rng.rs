//! Seeded randomness.
//!
//! Every stream is a ChaCha8 generator (RFC 7539 block function reduced to
//! eight rounds, as implemented by `rand_chacha`), seeded from a 64-bit value.
//! The algorithm is frozen: identical seeds produce identical streams on
//! every platform. Sub-streams for independent tasks are derived by hashing
//! `(seed, label, index)` with SHA-256, see [`derive_seed`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

/// A seeded, platform-independent random stream.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream; does not advance `self`.
    pub fn fork(&self, label: &str, index: u64) -> Self {
        Self::new(derive_seed(self.seed, label, index))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order (partial Fisher-Yates).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> alloc::vec::Vec<usize> {
        let mut pool: alloc::vec::Vec<usize> = (0..n).collect();
        let k = k.min(n);
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

/// Deterministic sub-seed: first eight bytes (little endian) of
/// `SHA-256(seed_le || label || index_le)`.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
