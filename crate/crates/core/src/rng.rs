//! Seeded, stream-splittable random number generation.
//!
//! Backed by ChaCha8, a counter-based generator: the output depends only on
//! `(seed, stream, word position)`, so the same seed yields the same stream
//! on every platform, and independent consumers (training, particle
//! filtering, data generation) draw from disjoint streams of one seed.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream ids used by the library. Callers may use any other value.
pub mod streams {
    pub const TRAIN: u64 = 1;
    pub const EVAL: u64 = 2;
    pub const SMC: u64 = 3;
    pub const DATA_TRAIN: u64 = 10;
    pub const DATA_VAL: u64 = 11;
    pub const DATA_TEST: u64 = 12;
    pub const INIT: u64 = 20;
    pub const GENERATE: u64 = 30;
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh generator on a sub-stream derived from this one's seed and stream.
    ///
    /// Derivation is positional, not stateful: `fork(i)` returns the same
    /// generator no matter how many numbers were drawn from `self`.
    pub fn fork(&self, id: u64) -> Rng {
        // splitmix64 finaliser to spread (stream, id) over the 64-bit stream space
        let mut z = self
            .stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(id.wrapping_add(1));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        Rng::with_stream(self.seed, z)
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer on [lo, hi] inclusive.
    pub fn int_range(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    /// Uniform index in `0..n`; `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}
