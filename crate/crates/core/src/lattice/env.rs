use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EnvLaw, SiteKernel};
use crate::{Error, Real, Result};

/// Read access to a field of site kernels on `Z^d`.
pub trait KernelField<T: Real>: Sync {
    fn dim(&self) -> usize;

    /// Writes `omega(x, .)` into `out` (length `2d`).
    fn kernel_into(&self, x: &[i64], out: &mut [T]) -> Result<()>;

    /// Materializes the kernels of `window` into a flat table; DPs that touch
    /// each site many times use this instead of repeated lookups.
    fn materialize(&self, window: &Window) -> Result<Environment<T>> {
        let d2 = 2 * self.dim();
        let mut probs = vec![T::zero(); window.len() * d2];
        probs.par_chunks_mut(d2).enumerate().try_for_each(|(i, out)| {
            let x = window.site(i);
            self.kernel_into(&x, out)
        })?;
        Ok(Environment {
            window: window.clone(),
            probs,
            policy: BoundaryPolicy::Strict,
            fill: None,
            clamp_events: 0,
        })
    }
}

/// Axis-aligned box `lo <= x < lo + shape`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    lo: Vec<i64>,
    shape: Vec<usize>,
}

impl Window {
    pub fn new(lo: Vec<i64>, shape: Vec<usize>) -> Result<Self> {
        if lo.len() != shape.len() || lo.is_empty() {
            return Err(Error::DimensionMismatch { expected: lo.len(), got: shape.len() });
        }
        if shape.iter().any(|&s| s == 0) {
            return Err(Error::EmptyWindow);
        }
        Ok(Window { lo, shape })
    }

    /// Cube `[-radius, radius]^d`.
    pub fn centered(d: usize, radius: usize) -> Self {
        Window { lo: vec![-(radius as i64); d], shape: vec![2 * radius + 1; d] }
    }

    /// Smallest box containing the l1 ball of `radius` around `center`.
    pub fn around(center: &[i64], radius: usize) -> Self {
        Window {
            lo: center.iter().map(|c| c - radius as i64).collect(),
            shape: vec![2 * radius + 1; center.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[i64] {
        &self.lo
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_extent(&self) -> usize {
        self.shape.iter().copied().max().unwrap_or(0)
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        x.iter().zip(&self.lo).zip(&self.shape).all(|((&c, &l), &s)| c >= l && c < l + s as i64)
    }

    /// Row-major index (last axis fastest) of a site inside the window.
    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        for ((&c, &l), &s) in x.iter().zip(&self.lo).zip(&self.shape) {
            let off = c - l;
            if off < 0 || off >= s as i64 {
                return None;
            }
            idx = idx * s + off as usize;
        }
        Some(idx)
    }

    pub fn site(&self, mut idx: usize) -> Vec<i64> {
        let mut x = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            let s = self.shape[k];
            x[k] = self.lo[k] + (idx % s) as i64;
            idx /= s;
        }
        x
    }

    /// Representative of `x` modulo the window's periods.
    pub fn wrap(&self, x: &[i64]) -> Vec<i64> {
        x.iter()
            .zip(&self.lo)
            .zip(&self.shape)
            .map(|((&c, &l), &s)| l + (c - l).rem_euclid(s as i64))
            .collect()
    }
}

/// How kernels outside the window are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum BoundaryPolicy {
    /// The window tiles `Z^d` periodically.
    Periodic,
    /// Sites outside the window carry the mean kernel.
    #[default]
    MeanFill,
    /// Access outside the window is an error.
    Strict,
}

/// Site kernels materialized on a finite window.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment<T> {
    window: Window,
    probs: Vec<T>,
    policy: BoundaryPolicy,
    fill: Option<SiteKernel<T>>,
    clamp_events: usize,
}

impl<T: Real> Environment<T> {
    /// Builds an environment from a flat kernel table in window order.
    pub fn from_table(
        window: Window,
        probs: Vec<T>,
        policy: BoundaryPolicy,
        fill: Option<SiteKernel<T>>,
    ) -> Result<Self> {
        let d2 = 2 * window.dim();
        if probs.len() != window.len() * d2 {
            return Err(Error::DimensionMismatch { expected: window.len() * d2, got: probs.len() });
        }
        if policy == BoundaryPolicy::MeanFill && fill.is_none() {
            return Err(Error::InvalidArgument("mean-fill policy requires a fill kernel".into()));
        }
        Ok(Environment { window, probs, policy, fill, clamp_events: 0 })
    }

    /// Same kernel at every site of the window.
    pub fn homogeneous(window: Window, kernel: &SiteKernel<T>, policy: BoundaryPolicy) -> Self {
        let probs = kernel.as_slice().iter().copied().cycle().take(window.len() * 2 * window.dim()).collect();
        Environment { window, probs, policy, fill: Some(kernel.clone()), clamp_events: 0 }
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn policy(&self) -> BoundaryPolicy {
        self.policy
    }

    pub fn fill_kernel(&self) -> Option<&SiteKernel<T>> {
        self.fill.as_ref()
    }

    pub fn with_policy(mut self, policy: BoundaryPolicy, fill: Option<SiteKernel<T>>) -> Result<Self> {
        if policy == BoundaryPolicy::MeanFill && fill.is_none() && self.fill.is_none() {
            return Err(Error::InvalidArgument("mean-fill policy requires a fill kernel".into()));
        }
        self.policy = policy;
        if fill.is_some() {
            self.fill = fill;
        }
        Ok(self)
    }

    /// Number of sites where the ellipticity clamp fired during sampling.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    pub fn table(&self) -> &[T] {
        &self.probs
    }

    /// Kernel slice of a site inside the window.
    #[inline]
    pub fn local(&self, idx: usize) -> &[T] {
        let d2 = 2 * self.window.dim();
        &self.probs[idx * d2..(idx + 1) * d2]
    }

    /// Kernel at any site, resolved through the boundary policy.
    pub fn kernel(&self, x: &[i64]) -> Result<&[T]> {
        if let Some(i) = self.window.index_of(x) {
            return Ok(self.local(i));
        }
        match self.policy {
            BoundaryPolicy::Periodic => {
                let i = self.window.index_of(&self.window.wrap(x)).expect("wrapped site inside window");
                Ok(self.local(i))
            }
            BoundaryPolicy::MeanFill => Ok(self.fill.as_ref().expect("fill kernel").as_slice()),
            BoundaryPolicy::Strict => Err(Error::WindowExhausted(x.to_vec())),
        }
    }

    /// Shifted environment `(theta_z omega)(x) = omega(x + z)` on the same window.
    pub fn shifted(&self, z: &[i64]) -> Result<Self> {
        let d2 = 2 * self.window.dim();
        let mut probs = Vec::with_capacity(self.probs.len());
        let mut y = vec![0; z.len()];
        for i in 0..self.window.len() {
            let x = self.window.site(i);
            for k in 0..z.len() {
                y[k] = x[k] + z[k];
            }
            probs.extend_from_slice(&self.kernel(&y)?[..d2]);
        }
        Ok(Environment { window: self.window.clone(), probs, policy: self.policy, fill: self.fill.clone(), clamp_events: 0 })
    }

    pub fn sites(&self) -> impl Iterator<Item = (Vec<i64>, &[T])> + '_ {
        (0..self.window.len()).map(move |i| (self.window.site(i), self.local(i)))
    }
}

impl<T: Real> KernelField<T> for Environment<T> {
    fn dim(&self) -> usize {
        self.window.dim()
    }

    fn kernel_into(&self, x: &[i64], out: &mut [T]) -> Result<()> {
        out.copy_from_slice(self.kernel(x)?);
        Ok(())
    }
}

/// The full-lattice environment drawn from a law with a given seed,
/// evaluated lazily: each site's kernel is a pure function of `(seed, x)`.
#[derive(Debug, Clone, Copy)]
pub struct LawField<'a, T> {
    pub law: &'a EnvLaw<T>,
    pub seed: u64,
}

impl<'a, T: Real> LawField<'a, T> {
    pub fn new(law: &'a EnvLaw<T>, seed: u64) -> Self {
        LawField { law, seed }
    }
}

impl<T: Real> KernelField<T> for LawField<'_, T> {
    fn dim(&self) -> usize {
        self.law.dim()
    }

    fn kernel_into(&self, x: &[i64], out: &mut [T]) -> Result<()> {
        self.law.kernel_at(self.seed, x, out);
        Ok(())
    }
}

/// Samples the law on `window`. Deterministic in `(law, window, seed)`, and
/// consistent across windows: a site gets the same kernel in every window
/// that contains it.
pub fn sample_environment<T: Real>(law: &EnvLaw<T>, window: &Window, seed: u64) -> Result<Environment<T>> {
    if window.dim() != law.dim() {
        return Err(Error::DimensionMismatch { expected: law.dim(), got: window.dim() });
    }
    if let Some(range) = law.mixing_range() {
        if range > window.max_extent() {
            return Err(Error::BadMixingRange { range, extent: window.max_extent() });
        }
    }
    let d2 = 2 * law.dim();
    let mut probs = vec![T::zero(); window.len() * d2];
    let clamps: usize = probs
        .par_chunks_mut(d2)
        .enumerate()
        .map(|(i, out)| usize::from(law.kernel_at(seed, &window.site(i), out)))
        .sum();
    Ok(Environment {
        window: window.clone(),
        probs,
        policy: BoundaryPolicy::MeanFill,
        fill: Some(law.mean_kernel().clone()),
        clamp_events: clamps,
    })
}
