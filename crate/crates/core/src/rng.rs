//! Portable random source for the simulator.
//!
//! The stream is xoshiro256++ seeded through SplitMix64 (`seed_from_u64`).
//! Uniform doubles take the top 53 bits of each output: `(x >> 11) * 2^-53`.
//! Normal deviates use the Marsaglia polar method: pairs `(u, v)` uniform on
//! `[-1, 1)` are drawn until `0 < s = u^2 + v^2 < 1`, and `u * sqrt(-2 ln s / s)`
//! is returned. The second deviate of each pair is discarded, so every call
//! consumes an even number of uniforms and the draw order never depends on
//! cached state.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Clone, Debug)]
pub struct SimRng {
    inner: Xoshiro256PlusPlus,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform01()
    }

    /// Standard normal deviate.
    pub fn gaussian(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.uniform01() - 1.0;
            let v = 2.0 * self.uniform01() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }

    pub fn normal(&mut self, sigma: f64) -> f64 {
        sigma * self.gaussian()
    }
}
