//! Seeded randomness.
//!
//! All draws come from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded from a
//! single `u64`. The same seed always yields the same stream of draws.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RNG_ALGORITHM: &str = "chacha20";

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha20Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this generator's seed and a label.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { seed, inner }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        xs.shuffle(&mut self.inner);
    }

    /// Tensor of i.i.d. N(0, 1) entries.
    pub fn gaussian_tensor(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.standard_normal()).collect();
        Tensor::new(shape.to_vec(), data).expect("length matches shape")
    }

    /// Class index drawn uniformly from `0..classes`.
    pub fn uniform_label(&mut self, classes: usize) -> Result<usize> {
        if classes == 0 {
            return Err(Error::Domain("uniform_label needs at least one class".into()));
        }
        Ok(self.below(classes))
    }

    /// Class index drawn with probability proportional to `weights`.
    pub fn weighted_label(&mut self, weights: &[f64]) -> Result<usize> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Domain(format!("invalid class weights {weights:?}")));
        }
        let mut u = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return Ok(i);
            }
            u -= w;
        }
        Ok(weights.iter().rposition(|w| *w > 0.0).unwrap_or(0))
    }
}

/// `1×classes` one-hot row for a uniformly drawn class.
pub fn uniform_one_hot(rng: &mut Rng, classes: usize) -> Result<Tensor> {
    let k = rng.uniform_label(classes)?;
    let mut t = Tensor::zeros(&[1, classes]);
    t.data_mut()[k] = 1.0;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a = Rng::new(0).gaussian_tensor(&[4, 3]);
        let b = Rng::new(0).gaussian_tensor(&[4, 3]);
        assert_eq!(a, b);
        assert_ne!(a, Rng::new(1).gaussian_tensor(&[4, 3]));
    }

    #[test]
    fn derived_streams_differ() {
        let a = Rng::derive(7, 1).gaussian_tensor(&[8]);
        let b = Rng::derive(7, 2).gaussian_tensor(&[8]);
        assert_ne!(a, b);
        assert_eq!(a, Rng::derive(7, 1).gaussian_tensor(&[8]));
    }

    #[test]
    fn gaussian_moments() {
        let t = Rng::new(42).gaussian_tensor(&[100_000]);
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn uniform_label_frequencies() {
        let mut rng = Rng::new(1);
        let mut counts = [0usize; 4];
        for _ in 0..100_000 {
            counts[rng.uniform_label(4).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e5 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn zero_classes_is_domain_error() {
        assert!(matches!(
            Rng::new(0).uniform_label(0),
            Err(Error::Domain(_))
        ));
        assert!(uniform_one_hot(&mut Rng::new(0), 0).is_err());
    }

    #[test]
    fn one_hot_row() {
        let t = uniform_one_hot(&mut Rng::new(3), 5).unwrap();
        assert_eq!(t.shape(), &[1, 5]);
        assert_eq!(t.sum(), 1.0);
    }

    #[test]
    fn weighted_label_respects_zero_weight() {
        let mut rng = Rng::new(2);
        for _ in 0..1000 {
            assert_ne!(rng.weighted_label(&[1.0, 0.0, 2.0]).unwrap(), 1);
        }
        assert!(rng.weighted_label(&[0.0, 0.0]).is_err());
    }
}
