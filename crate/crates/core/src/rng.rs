//! Seeded pseudorandom numbers.
//!
//! The generator is xoshiro256++ whose 256-bit state is expanded from the
//! 64-bit seed with SplitMix64 (the `seed_from_u64` construction of the
//! `rand_xoshiro` crate). Derived values are produced with fixed formulas so
//! that other implementations can reproduce the stream exactly:
//!
//! * uniform `[0, 1)`: `(next_u64() >> 11) * 2^-53`
//! * uniform `[lo, hi)`: `lo + (hi - lo) * u`, re-drawn in the rare case that
//!   rounding lands on `hi`
//! * integer below `n`: `(next_u64() as u128 * n) >> 64`

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct Rng {
    inner: Xoshiro256PlusPlus,
    draws: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            draws: 0,
        }
    }

    /// Independent stream for `(seed, stream)`, e.g. one per sample index.
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mixed = seed ^ stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA).rotate_left(17);
        Rng::new(mixed)
    }

    /// Number of 64-bit words drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.inner.next_u64()
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Range(format!("uniform needs lo < hi, got [{lo}, {hi})")));
        }
        loop {
            let v = lo + (hi - lo) * self.next_f64();
            if v < hi {
                return Ok(v);
            }
        }
    }

    /// Integer uniformly distributed in `0..n` (n > 0).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Tensor of i.i.d. uniform samples drawn in flat order.
    pub fn uniform_tensor(&mut self, lo: f64, hi: f64, shape: &[usize]) -> Result<Tensor> {
        if !(lo < hi) {
            return Err(Error::Range(format!("uniform needs lo < hi, got [{lo}, {hi})")));
        }
        let mut t = Tensor::zeros(shape)?;
        for v in t.data_mut() {
            *v = self.uniform(lo, hi)?;
        }
        Ok(t)
    }

    /// Fisher-Yates permutation of `0..n`, swapping from the back.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }
}
