//! Seeded, splittable pseudo-randomness.
//!
//! A [`SimRng`] is identified by a 64-bit key. [`SimRng::fork`] derives a
//! child key from the parent key and a label without consuming anything from
//! the parent, so a stream addressed as `root / client 7 / round 3` is the
//! same no matter how many other clients exist or in which order they run.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::linalg::Vector;
use crate::scalar::Scalar;

/// Well-known stream labels used across the simulator.
pub mod streams {
    pub const INIT: u64 = 0x1001;
    pub const DATA: u64 = 0x1002;
    pub const SPLIT: u64 = 0x1003;
    pub const PARTITION: u64 = 0x1004;
    pub const BATCH: u64 = 0x2001;
    pub const PARTICIPATION: u64 = 0x2002;
    pub const NOISE: u64 = 0x2003;
    pub const SELECTION: u64 = 0x2004;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SimRng {
    key: u64,
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        let key = splitmix64(seed);
        Self {
            key,
            inner: ChaCha8Rng::seed_from_u64(key),
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Child stream addressed by `label`. Pure in `self`'s key.
    pub fn fork(&self, label: u64) -> Self {
        let key = splitmix64(self.key ^ splitmix64(label.wrapping_add(0xA076_1D64_78BD_642F)));
        Self {
            key,
            inner: ChaCha8Rng::seed_from_u64(key),
        }
    }

    /// Convenience for a chain of forks.
    pub fn fork_path(&self, labels: &[u64]) -> Self {
        labels.iter().fold(self.clone(), |r, &l| r.fork(l))
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn choose_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, k.min(n)).into_vec()
    }
}

impl RngCore for SimRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `n` i.i.d. draws from `N(mean, std²)`. `std = 0` yields exactly `mean`.
pub fn gaussian_sample<T: Scalar>(
    rng: &mut SimRng,
    mean: T,
    std: T,
    n: usize,
) -> Result<Vector<T>> {
    if !(std >= T::zero()) || !std.is_finite() {
        return Err(invalid(format!(
            "standard deviation must be finite and >= 0, got {std}"
        )));
    }
    if std == T::zero() {
        return Ok(Vector::filled(n, mean));
    }
    Ok((0..n)
        .map(|_| mean + std * T::of(rng.standard_normal()))
        .collect::<Vec<_>>()
        .into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_std_is_constant() {
        let mut r = SimRng::new(1);
        let v = gaussian_sample(&mut r, 0.0f64, 0.0, 3).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn negative_std_rejected() {
        let mut r = SimRng::new(1);
        assert!(gaussian_sample(&mut r, 0.0f64, -1.0, 3).is_err());
    }

    #[test]
    fn sample_mean_near_zero() {
        let mut r = SimRng::new(2024);
        let v = gaussian_sample(&mut r, 0.0f64, 1.0, 100_000).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn same_seed_same_stream() {
        let a = gaussian_sample(&mut SimRng::new(9), 0.0f64, 1.0, 16).unwrap();
        let b = gaussian_sample(&mut SimRng::new(9), 0.0f64, 1.0, 16).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forks_are_independent_of_sibling_count_and_parent_usage() {
        let root = SimRng::new(5);
        let draws = |n_clients: u64| -> Vec<Vec<f64>> {
            (0..n_clients)
                .map(|c| {
                    let mut r = root.fork(c);
                    gaussian_sample(&mut r, 0.0, 1.0, 4).unwrap().into_inner()
                })
                .collect()
        };
        let three = draws(3);
        let four = draws(4);
        assert_eq!(&four[..3], &three[..]);

        let mut used = root.clone();
        used.uniform();
        assert_eq!(used.fork(1).key(), root.fork(1).key());
    }

    #[test]
    fn fork_labels_give_distinct_streams() {
        let root = SimRng::new(0);
        assert_ne!(root.fork(0).key(), root.fork(1).key());
        assert_ne!(root.fork_path(&[1, 2]).key(), root.fork_path(&[2, 1]).key());
    }
}
