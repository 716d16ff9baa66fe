use serde::{Deserialize, Serialize};

use super::Direction;
use crate::{Error, Real, Result};

/// Jump probabilities out of one site, indexed by [`Direction::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteKernel<T> {
    probs: Vec<T>,
}

impl<T: Real> SiteKernel<T> {
    /// Normalization tolerance: `1e-12` in `f64`, a few ulps in `f32`.
    pub fn tolerance() -> T {
        T::lit(1e-12).max(T::lit(16.0) * T::epsilon())
    }

    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() || probs.len() % 2 != 0 {
            return Err(Error::InvalidKernel(format!("{} entries, need 2d", probs.len())));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= T::zero() && *p <= T::one())) {
            return Err(Error::InvalidKernel(format!("entries outside [0,1]: {probs:?}")));
        }
        let sum: T = probs.iter().copied().sum();
        if (sum - T::one()).abs() > Self::tolerance() {
            return Err(Error::InvalidKernel(format!("entries sum to {sum}")));
        }
        Ok(SiteKernel { probs })
    }

    /// Simple symmetric random walk kernel.
    pub fn uniform(d: usize) -> Self {
        SiteKernel { probs: vec![T::one() / T::of_usize(2 * d); 2 * d] }
    }

    /// One-dimensional kernel `(p, 1-p)` for steps `(+1, -1)`.
    pub fn one_dim(p_plus: T) -> Result<Self> {
        Self::new(vec![p_plus, T::one() - p_plus])
    }

    pub fn dim(&self) -> usize {
        self.probs.len() / 2
    }

    pub fn prob(&self, e: Direction) -> T {
        self.probs[e.index()]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.probs
    }

    pub fn min_prob(&self) -> T {
        self.probs.iter().copied().fold(T::infinity(), T::min)
    }

    /// Mean displacement `sum_e e * p(e)`.
    pub fn drift(&self) -> Vec<T> {
        (0..self.dim()).map(|i| self.probs[2 * i] - self.probs[2 * i + 1]).collect()
    }

    pub fn is_elliptic(&self, kappa: T) -> bool {
        self.probs.iter().all(|&p| p >= kappa)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks() {
        assert!(SiteKernel::new(vec![0.5f64, 0.5]).is_ok());
        assert!(SiteKernel::new(vec![0.5f64, 0.51]).is_err());
        assert!(SiteKernel::new(vec![1.0f64]).is_err());
        assert!(SiteKernel::new(vec![1.2f64, -0.2]).is_err());
        let k = SiteKernel::<f32>::uniform(2);
        assert_eq!(k.as_slice(), &[0.25f32; 4]);
    }

    #[test]
    fn drift_and_min() {
        let k = SiteKernel::new(vec![0.4f64, 0.1, 0.3, 0.2]).unwrap();
        let v = k.drift();
        assert!((v[0] - 0.3).abs() < 1e-15 && (v[1] - 0.1).abs() < 1e-15);
        assert_eq!(k.min_prob(), 0.1);
        assert!(k.is_elliptic(0.1) && !k.is_elliptic(0.11));
    }
}
