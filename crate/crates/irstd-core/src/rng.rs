//! Seeded random streams.
//!
//! Everything stochastic in the crate draws from [`Stream`], a ChaCha8
//! generator with explicit substream derivation, so artifacts are
//! reproducible bit-for-bit from a single seed regardless of platform.

use num_traits::Float;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Deterministic random stream.
pub struct Stream {
    rng: ChaCha8Rng,
    /// Cached second Box–Muller variate.
    spare_normal: Option<f64>,
}

impl Stream {
    pub fn seed(seed: u64) -> Self {
        Stream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Independent substream for (seed, label, index); used so per-scene /
    /// per-epoch draws do not depend on generation order.
    pub fn derive(seed: u64, label: u64, index: u64) -> Self {
        // splitmix-style mixing keeps nearby indices uncorrelated.
        let mut x = seed ^ label.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        x = x.wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        x ^= x >> 31;
        x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^= x >> 29;
        Stream::seed(x)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). Rejection-free modulo is fine here: n is
    /// always tiny compared to 2^64.
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box–Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0,1] so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * Float::ln(u1)).sqrt();
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.spare_normal = Some(r * Float::sin(theta));
        r * Float::cos(theta)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
