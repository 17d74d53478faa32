//! Seeded sampling of parameters and points.
//!
//! The stream is MT19937 (32-bit Mersenne Twister, reference `init_genrand`
//! seeding). Uniform doubles use the 53-bit `genrand_res53` construction, so a
//! seed reproduces the same sequence as the reference generator. Draw order is
//! sample by sample: the coordinates of one sample occupy consecutive draws.

use rand_mt::Mt;

/// Default experiment seed.
pub const DEFAULT_SEED: u32 = 515;

/// Versioned name of the stream, echoed into experiment metadata.
pub const STREAM_NAME: &str = "mt19937-res53-v1";

pub struct Sampler {
    mt: Mt,
}

impl Sampler {
    pub fn new(seed: u32) -> Self {
        Self { mt: Mt::new(seed) }
    }

    /// Uniform on `[0, 1)` with 53-bit resolution.
    pub fn next_unit(&mut self) -> f64 {
        let a = (self.mt.next_u32() >> 5) as f64;
        let b = (self.mt.next_u32() >> 6) as f64;
        (a * 67_108_864.0 + b) / 9_007_199_254_740_992.0
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_unit()
    }

    /// Uniform sample of `Y = [-1, 1]^dims`.
    pub fn parameter(&mut self, dims: usize) -> Vec<f64> {
        (0..dims).map(|_| self.uniform(-1.0, 1.0)).collect()
    }

    pub fn parameters(&mut self, dims: usize, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.parameter(dims)).collect()
    }

    /// Uniform sample of the box with the given centers and half-lengths.
    pub fn in_box(&mut self, center: &[f64], half: &[f64]) -> Vec<f64> {
        center
            .iter()
            .zip(half)
            .map(|(&c, &h)| self.uniform(c - h, c + h))
            .collect()
    }

    /// Uniform integer in `0..n` by rejection.
    pub fn below(&mut self, n: u32) -> u32 {
        assert!(n > 0);
        let zone = u32::MAX - (u32::MAX % n);
        loop {
            let v = self.mt.next_u32();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i as u32 + 1) as usize;
            p.swap(i, j);
        }
        p
    }
}
