//! Seeded randomness.
//!
//! Every stream is a SplitMix64 generator (64-bit state, one multiply-xorshift
//! finalizer per draw). Substreams are derived from `(seed, stream)` by
//! hashing, so restart `k` of a run always sees the same numbers no matter
//! how many draws other restarts made.

use num_complex::Complex64;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::SplitMix64;

use crate::error::{invalid, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: SplitMix64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent substream number `stream` of this generator's seed.
    /// Does not advance `self`.
    pub fn fork(&self, stream: u64) -> Rng {
        let mut mixer =
            SplitMix64::seed_from_u64(self.seed ^ stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
        Rng::new(mixer.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// +1 or -1 with equal probability.
    pub fn rademacher(&mut self) -> f64 {
        if self.inner.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// `n` draws of `CN(0, variance)`: real and imaginary parts are independent
/// with variance `variance / 2` each, so `E|z|^2 = variance`.
pub fn sample_circular_complex_gaussian(
    rng: &mut Rng,
    n: usize,
    variance: f64,
) -> Result<Vec<Complex64>> {
    if !(variance >= 0.0) {
        return Err(invalid(format!("variance must be nonnegative, got {variance}")));
    }
    let sd = (variance / 2.0).sqrt();
    Ok((0..n)
        .map(|_| {
            let re = rng.standard_normal();
            let im = rng.standard_normal();
            Complex64::new(sd * re, sd * im)
        })
        .collect())
}

pub fn sample_real_gaussian(rng: &mut Rng, n: usize, variance: f64) -> Result<Vec<f64>> {
    if !(variance >= 0.0) {
        return Err(invalid(format!("variance must be nonnegative, got {variance}")));
    }
    let sd = variance.sqrt();
    Ok((0..n).map(|_| sd * rng.standard_normal()).collect())
}
