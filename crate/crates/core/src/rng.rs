//! Reproducible random stream used by the corruption transforms, the phantom
//! generator and random weight initialization.
//!
//! The generator is xoshiro256** (Blackman & Vigna). A `u64` seed is expanded
//! into the 256-bit state with SplitMix64 (`rand_xoshiro`'s `seed_from_u64`).
//! Every derived draw is defined here so that other implementations can replay
//! the exact stream:
//!
//! * `uniform()`: `(next_u64() >> 11) * 2^-53`, in `[0, 1)`.
//! * `below(n)`: `(next_u64() as u128 * n as u128) >> 64`, in `[0, n)`.
//! * `range(lo, hi)`: `lo + (hi - lo) * uniform()`.
//! * `normal()`: Box–Muller, `sqrt(-2 ln(1 - u1)) * cos(2π u2)` with `u1` drawn
//!   before `u2`; the sine branch is discarded so each call consumes exactly
//!   two words.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

/// Golden-ratio increment used to derive independent sub-stream seeds.
pub const STREAM_INCREMENT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct DetRng {
    inner: Xoshiro256StarStar,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    /// Seed of sub-stream `index` derived from `seed`.
    pub fn substream_seed(seed: u64, index: u64) -> u64 {
        seed.wrapping_add(STREAM_INCREMENT.wrapping_mul(index.wrapping_add(1)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
