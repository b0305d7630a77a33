//! Seeded random streams.
//!
//! Every random draw in the crate goes through [`Rng`], a ChaCha8 stream cipher
//! generator keyed by a 64-bit seed. ChaCha exposes 2^64 independent streams per
//! key, which is what [`Rng::split`] hands out, so child generators never overlap
//! with their parent.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    next_stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Generator for stream `stream` of `seed`. Distinct streams are independent.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            next_stream: stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child generator on a fresh stream; deterministic in the parent's history.
    pub fn split(&mut self) -> Rng {
        let stream = self.next_stream;
        self.next_stream = self.next_stream.wrapping_add(1);
        let child_seed = self.inner.next_u64();
        Rng::with_stream(child_seed, stream)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.gen::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Fisher-Yates shuffle of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }

    pub fn uniform_vec(&mut self, len: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..len).map(|_| self.uniform(lo, hi)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_children_differ_from_parent() {
        let mut parent = Rng::new(7);
        let mut c1 = parent.split();
        let mut c2 = parent.split();
        let x: Vec<u64> = (0..8).map(|_| c1.next_u64()).collect();
        let y: Vec<u64> = (0..8).map(|_| c2.next_u64()).collect();
        assert_ne!(x, y);

        let mut again = Rng::new(7);
        let mut c1b = again.split();
        let x2: Vec<u64> = (0..8).map(|_| c1b.next_u64()).collect();
        assert_eq!(x, x2);
    }

    #[test]
    fn permutation_is_bijection() {
        let mut rng = Rng::new(3);
        let mut p = rng.permutation(784);
        p.sort_unstable();
        assert_eq!(p, (0..784).collect::<Vec<_>>());
    }
}
