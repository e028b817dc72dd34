//! Seedable random source shared by every stochastic component.
//!
//! The generator is xoshiro256++ seeded through SplitMix64 (the reference
//! `seed_from_u64` expansion). Derived values are defined on top of the raw
//! 64-bit stream so other implementations can reproduce datasets exactly:
//!
//! - `uniform()`   : `(next_u64() >> 40) as f32 * 2^-24`, in `[0, 1)`.
//! - `uniform_f64()`: `(next_u64() >> 11) as f64 * 2^-53`, in `[0, 1)`.
//! - `normal()`    : Box-Muller on two `uniform_f64` draws `u1, u2`,
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`; the sine branch is discarded.
//! - `below(n)`    : `next_u64() % n` (bias is irrelevant at our sizes).
//! - `derive(a, b)`: a child seed `splitmix64(seed ^ a * K1 ^ b * K2)` used
//!   to key per-class or per-epoch streams without consuming the parent.

use rand_xoshiro::rand_core::{Rng as _, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Debug, Clone)]
pub struct Rng {
    inner: Xoshiro256PlusPlus,
}

const K1: u64 = 0x9E37_79B9_7F4A_7C15;
const K2: u64 = 0xC2B2_AE3D_27D4_EB4F;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(K1);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with two stream keys into an independent child seed.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(seed ^ a.wrapping_mul(K1) ^ b.wrapping_mul(K2))
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn derive(seed: u64, a: u64, b: u64) -> Self {
        Rng::new(derive_seed(seed, a, b))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u64 << 24) as f32)
    }

    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f32 {
        let u1 = self.uniform_f64();
        let u2 = self.uniform_f64();
        ((-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
