//! Deterministic, splittable random source.
//!
//! A [`RandomSource`] is a ChaCha stream keyed by a 64-bit seed. Child
//! sources are derived from `(seed, label)` alone, so work fanned out over
//! threads sees the same numbers regardless of scheduling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{C64, CMat};

#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream identified by `label`.
    pub fn split(&self, label: u64) -> Self {
        Self::new(splitmix64(self.seed ^ splitmix64(label.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    /// Child stream for a labelled sub-task, e.g. `split_named("channel", r)`.
    pub fn split_named(&self, name: &str, index: u64) -> Self {
        let h = name
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
        self.split(h).split(index)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Circularly-symmetric complex Gaussian with `E|z|^2 = variance`.
    pub fn complex_normal(&mut self, variance: f64) -> C64 {
        let s = (variance / 2.0).sqrt();
        C64::new(s * self.normal(), s * self.normal())
    }

    pub fn complex_normal_matrix(&mut self, rows: usize, cols: usize, variance: f64) -> CMat {
        // Column-major fill keeps the draw order independent of nalgebra internals.
        let mut m = CMat::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m[(i, j)] = self.complex_normal(variance);
            }
        }
        m
    }

    pub fn bits(&mut self, n: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let w = self.rng.next_u64();
            for b in 0..64 {
                if out.len() == n {
                    break;
                }
                out.push(((w >> b) & 1) as u8);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = RandomSource::new(42);
        let mut b = RandomSource::new(42);
        for _ in 0..10 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn split_is_independent_of_parent_state() {
        let root = RandomSource::new(9);
        let mut advanced = root.clone();
        advanced.uniform();
        let mut x = root.split(3);
        let mut y = advanced.split(3);
        assert_eq!(x.normal().to_bits(), y.normal().to_bits());
        let mut z = root.split(4);
        let mut x2 = root.split(3);
        assert_ne!(x2.normal().to_bits(), z.normal().to_bits());
    }

    #[test]
    fn bits_are_binary() {
        let mut r = RandomSource::new(1);
        let b = r.bits(1000);
        assert_eq!(b.len(), 1000);
        assert!(b.iter().all(|&x| x <= 1));
        let ones = b.iter().filter(|&&x| x == 1).count();
        assert!(ones > 400 && ones < 600);
    }
}
