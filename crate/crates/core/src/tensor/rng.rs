//! Seedable, portable random stream.
//!
//! Wraps SplitMix64 (64-bit state) so that every run is reproducible across
//! platforms. Child streams are derived with [`Rng64::split`], which lets each
//! layer or data stage own an independent sequence.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rng64(SplitMix64);

impl Rng64 {
    pub fn seed(seed: u64) -> Self {
        Self(SplitMix64::seed_from_u64(seed))
    }

    /// Derives an independent child stream and advances this one.
    pub fn split(&mut self) -> Self {
        Self::seed(self.0.next_u64())
    }

    /// Deterministic child stream for a (seed, label) pair without consuming
    /// any state.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut base = SplitMix64::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Self::seed(base.next_u64())
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.0);
        mean + std * z
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.0);
    }
}

impl RngCore for Rng64 {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
