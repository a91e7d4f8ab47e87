//! Seeded, reproducible random numbers.
//!
//! `Rng` wraps a ChaCha8 stream. Sequential draws are reproducible from the
//! seed; bulk draws through [`Rng::counter_uniforms`] address the stream by
//! word position so they are identical for any rayon thread count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const CHUNK: usize = 4096;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for parallel or nested work, a pure function of
    /// this generator's seed and `tag`.
    pub fn derive(&self, tag: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(tag.wrapping_add(1));
        Rng {
            seed: self.seed ^ tag.rotate_left(17).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            inner,
        }
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        to_unit(self.inner.next_u64())
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Lemire's widening multiply; the bias is below 2^-64 * n.
        ((self.inner.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// `n` uniforms in `[0, 1)` where entry `i` depends only on a sub-seed
    /// drawn from `self` and on `i`.
    pub fn counter_uniforms(&mut self, n: usize) -> Vec<f64> {
        let sub = self.inner.next_u64();
        let mut out = vec![0.0; n];
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let mut stream = ChaCha8Rng::seed_from_u64(sub);
            // one u64 consumes two 32-bit words
            stream.set_word_pos(2 * (c * CHUNK) as u128);
            for v in chunk.iter_mut() {
                *v = to_unit(stream.next_u64());
            }
        });
        out
    }
}

#[inline]
fn to_unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}
