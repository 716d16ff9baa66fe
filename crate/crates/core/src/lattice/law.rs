//! Generative laws for environments.
//!
//! Every law writes a site kernel as `omega(x, e) = m(e) * (1 + delta * a(x, e))`
//! where `m` is the mean kernel and the shape vector `a(x, .)` has mean zero,
//! `|a| <= 1` and `sum_e m(e) a(x, e) = 0`, so kernels stay on the simplex and
//! `xi(x, e) = 1 + delta * a(x, e)` is the normalized environment.

use super::{l1_ball, SignVector, SiteKernel};
use crate::rng::site_uniform;
use crate::{Error, Real, Result};

const STREAM_INNOVATION: u64 = 1;
const STREAM_LATENT: u64 = 2;

/// One support point of a finite-support family.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom<T> {
    pub weight: T,
    pub shape: Vec<T>,
}

/// Distribution of the per-site shape vector `a(x, .)`.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginalFamily<T> {
    /// `a = V * pattern`, `V = +-1` with equal probability.
    /// An empty pattern is replaced by the default pattern of the mean kernel.
    TwoPoint { pattern: Vec<T> },
    /// `a = V * pattern`, `V ~ U[-1, 1]`.
    UniformInterval { pattern: Vec<T> },
    /// `a` equals `atoms[i].shape` with probability `atoms[i].weight`.
    FiniteSupport { atoms: Vec<Atom<T>> },
}

impl<T: Real> MarginalFamily<T> {
    pub fn two_point() -> Self {
        MarginalFamily::TwoPoint { pattern: Vec::new() }
    }

    pub fn uniform_interval() -> Self {
        MarginalFamily::UniformInterval { pattern: Vec::new() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MarginalFamily::TwoPoint { .. } => "two-point",
            MarginalFamily::UniformInterval { .. } => "uniform-interval",
            MarginalFamily::FiniteSupport { .. } => "finite-support",
        }
    }

    /// Default perturbation direction: on each axis, push mass between `+e_i`
    /// and `-e_i` in the ratio that keeps the kernel normalized, scaled so the
    /// larger of the two entries has magnitude one.
    pub fn default_pattern(mean: &SiteKernel<T>) -> Vec<T> {
        let p = mean.as_slice();
        let mut c = vec![T::zero(); p.len()];
        for i in 0..mean.dim() {
            let (plus, minus) = (p[2 * i], p[2 * i + 1]);
            c[2 * i] = T::one().min(minus / plus);
            c[2 * i + 1] = -T::one().min(plus / minus);
        }
        c
    }

    fn draw(&self, u: f64, out: &mut [T]) {
        match self {
            MarginalFamily::TwoPoint { pattern } => {
                let v = if u < 0.5 { T::one() } else { -T::one() };
                out.iter_mut().zip(pattern).for_each(|(o, &c)| *o = v * c);
            }
            MarginalFamily::UniformInterval { pattern } => {
                let v = T::lit(2.0 * u - 1.0);
                out.iter_mut().zip(pattern).for_each(|(o, &c)| *o = v * c);
            }
            MarginalFamily::FiniteSupport { atoms } => {
                let mut acc = 0.0;
                let last = atoms.len() - 1;
                for (i, atom) in atoms.iter().enumerate() {
                    acc += atom.weight.to_f64_lossy();
                    if u < acc || i == last {
                        out.copy_from_slice(&atom.shape);
                        return;
                    }
                }
            }
        }
    }

    /// Extreme values of `a(x, e)` over the support.
    fn range(&self, e: usize) -> (T, T) {
        match self {
            MarginalFamily::TwoPoint { pattern } | MarginalFamily::UniformInterval { pattern } => {
                (-pattern[e].abs(), pattern[e].abs())
            }
            MarginalFamily::FiniteSupport { atoms } => atoms.iter().fold(
                (T::infinity(), T::neg_infinity()),
                |(lo, hi), a| (lo.min(a.shape[e]), hi.max(a.shape[e])),
            ),
        }
    }

    /// Shape vectors that bound the support from every side (extreme points
    /// of its convex hull).
    fn extreme_shapes(&self) -> Vec<Vec<T>> {
        match self {
            MarginalFamily::TwoPoint { pattern } | MarginalFamily::UniformInterval { pattern } => {
                vec![pattern.clone(), pattern.iter().map(|&c| -c).collect()]
            }
            MarginalFamily::FiniteSupport { atoms } => atoms.iter().map(|a| a.shape.clone()).collect(),
        }
    }

    /// Finite support as `(weight, shape)` pairs, when it exists.
    pub fn support(&self) -> Option<Vec<Atom<T>>> {
        match self {
            MarginalFamily::TwoPoint { pattern } => Some(vec![
                Atom { weight: T::lit(0.5), shape: pattern.clone() },
                Atom { weight: T::lit(0.5), shape: pattern.iter().map(|&c| -c).collect() },
            ]),
            MarginalFamily::UniformInterval { .. } => None,
            MarginalFamily::FiniteSupport { atoms } => Some(atoms.clone()),
        }
    }
}

/// Spatial dependence between sites.
#[derive(Debug, Clone, PartialEq)]
pub enum Mixing<T> {
    Iid,
    /// Finite-range moving average of latent site variables.
    ///
    /// `a(x) = (eta_x + b * sum_{|y-x|_1 <= h} w(y-x) zeta_y) / (1 + b * sum w)`
    /// with `w(r) = exp(-decay * |r|_1)` and `h = range / 2`, so sites further
    /// than `range` apart share no latent variable and are independent.
    Block { range: usize, decay: T, amplitude: T, latent_weight: T, offsets: Vec<(Vec<i64>, T)> },
}

/// Law of a random environment on `Z^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvLaw<T> {
    d: usize,
    kappa: T,
    mean: SiteKernel<T>,
    delta: T,
    family: MarginalFamily<T>,
    mixing: Mixing<T>,
}

fn check_kappa<T: Real>(d: usize, kappa: T) -> Result<()> {
    let bound = T::one() / T::of_usize(2 * d);
    if !(kappa > T::zero() && kappa < bound) {
        return Err(Error::KappaOutOfRange { kappa: kappa.to_f64_lossy(), bound: bound.to_f64_lossy() });
    }
    Ok(())
}

fn normalize_pattern<T: Real>(pattern: &[T], mean: &SiteKernel<T>, delta: T) -> Result<Vec<T>> {
    let d2 = mean.as_slice().len();
    if pattern.len() != d2 {
        return Err(Error::DimensionMismatch { expected: d2, got: pattern.len() });
    }
    let tilt: T = pattern.iter().zip(mean.as_slice()).map(|(&c, &m)| c * m).sum();
    if tilt.abs() > SiteKernel::<T>::tolerance() {
        return Err(Error::InvalidFamily(format!("pattern moves total mass by {tilt}")));
    }
    let scale = pattern.iter().fold(T::zero(), |a, c| a.max(c.abs()));
    if scale == T::zero() {
        if delta > T::zero() {
            return Err(Error::InvalidFamily("zero pattern with positive disorder".into()));
        }
        return Ok(pattern.to_vec());
    }
    Ok(pattern.iter().map(|&c| c / scale).collect())
}

fn resolve_family<T: Real>(
    family: MarginalFamily<T>,
    mean: &SiteKernel<T>,
    delta: T,
) -> Result<MarginalFamily<T>> {
    let tol = SiteKernel::<T>::tolerance();
    Ok(match family {
        MarginalFamily::TwoPoint { pattern } => {
            let p = if pattern.is_empty() { MarginalFamily::default_pattern(mean) } else { pattern };
            MarginalFamily::TwoPoint { pattern: normalize_pattern(&p, mean, delta)? }
        }
        MarginalFamily::UniformInterval { pattern } => {
            let p = if pattern.is_empty() { MarginalFamily::default_pattern(mean) } else { pattern };
            MarginalFamily::UniformInterval { pattern: normalize_pattern(&p, mean, delta)? }
        }
        MarginalFamily::FiniteSupport { atoms } => {
            if atoms.is_empty() {
                return Err(Error::InvalidFamily("no atoms".into()));
            }
            let d2 = mean.as_slice().len();
            let total: T = atoms.iter().map(|a| a.weight).sum();
            if atoms.iter().any(|a| !(a.weight > T::zero())) || (total - T::one()).abs() > tol {
                return Err(Error::InvalidFamily(format!("atom weights sum to {total}")));
            }
            for a in &atoms {
                if a.shape.len() != d2 {
                    return Err(Error::DimensionMismatch { expected: d2, got: a.shape.len() });
                }
                let tilt: T = a.shape.iter().zip(mean.as_slice()).map(|(&c, &m)| c * m).sum();
                if tilt.abs() > tol {
                    return Err(Error::InvalidFamily(format!("atom moves total mass by {tilt}")));
                }
            }
            for e in 0..d2 {
                let m: T = atoms.iter().map(|a| a.weight * a.shape[e]).sum();
                if m.abs() > tol {
                    return Err(Error::InvalidFamily(format!(
                        "atoms have nonzero mean {m} in direction {e}; marginal mean must equal the mean kernel"
                    )));
                }
            }
            let scale = atoms.iter().flat_map(|a| a.shape.iter()).fold(T::zero(), |s, c| s.max(c.abs()));
            if scale == T::zero() && delta > T::zero() {
                return Err(Error::InvalidFamily("all atoms are zero".into()));
            }
            let scale = if scale == T::zero() { T::one() } else { scale };
            let atoms = atoms
                .into_iter()
                .map(|a| Atom { weight: a.weight, shape: a.shape.iter().map(|&c| c / scale).collect() })
                .collect();
            MarginalFamily::FiniteSupport { atoms }
        }
    })
}

fn check_feasible<T: Real>(kappa: T, mean: &SiteKernel<T>, delta: T, family: &MarginalFamily<T>) -> Result<()> {
    let slack = T::lit(1e-12);
    for (e, &m) in mean.as_slice().iter().enumerate() {
        let (lo, hi) = family.range(e);
        for v in [m * (T::one() + delta * lo), m * (T::one() + delta * hi)] {
            if v < kappa - slack || v > T::one() + slack {
                return Err(Error::InfeasibleDisorder {
                    delta: delta.to_f64_lossy(),
                    direction: e,
                    value: v.to_f64_lossy(),
                    kappa: kappa.to_f64_lossy(),
                });
            }
        }
    }
    Ok(())
}

fn build<T: Real>(
    d: usize,
    kappa: T,
    mean: SiteKernel<T>,
    family: MarginalFamily<T>,
    delta: T,
    mixing: Mixing<T>,
) -> Result<EnvLaw<T>> {
    check_kappa(d, kappa)?;
    if mean.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: mean.dim() });
    }
    if !mean.is_elliptic(kappa) {
        return Err(Error::InvalidKernel(format!("mean kernel has an entry below kappa = {kappa}")));
    }
    if !(delta >= T::zero() && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("disorder {delta}")));
    }
    let family = resolve_family(family, &mean, delta)?;
    check_feasible(kappa, &mean, delta, &family)?;
    Ok(EnvLaw { d, kappa, mean, delta, family, mixing })
}

/// Law with independent, identically distributed site kernels.
pub fn make_iid_law<T: Real>(
    d: usize,
    kappa: T,
    mean_kernel: SiteKernel<T>,
    family: MarginalFamily<T>,
    disorder_target: T,
) -> Result<EnvLaw<T>> {
    build(d, kappa, mean_kernel, family, disorder_target, Mixing::Iid)
}

/// Law with finite-range dependence: kernels at l1 distance greater than
/// `range` are independent, and the correlation of `xi` at distance `r`
/// is at most `amplitude * exp(-decay * r)`.
#[allow(clippy::too_many_arguments)]
pub fn make_mixing_law<T: Real>(
    d: usize,
    kappa: T,
    mean_kernel: SiteKernel<T>,
    family: MarginalFamily<T>,
    disorder_target: T,
    range: usize,
    decay: T,
    amplitude: T,
) -> Result<EnvLaw<T>> {
    if range < 1 {
        return Err(Error::BadMixingRange { range, extent: 0 });
    }
    if !(decay > T::zero()) || !(amplitude >= T::zero()) {
        return Err(Error::InvalidArgument(format!("mixing decay {decay}, amplitude {amplitude}")));
    }
    let radius = (range / 2) as i64;
    let offsets: Vec<(Vec<i64>, T)> = l1_ball(d, radius)
        .into_iter()
        .map(|y| {
            let r: i64 = y.iter().map(|c| c.abs()).sum();
            (y, (-decay * T::of_usize(r as usize)).exp())
        })
        .collect();
    // Correlation at distance r is at most b^2 |N| e^{-g r} / (1 + b^2 W2).
    let n = T::of_usize(offsets.len());
    let w2: T = offsets.iter().map(|(_, w)| *w * *w).sum();
    let b2 = if amplitude == T::zero() {
        T::zero()
    } else if n <= amplitude * w2 {
        T::one()
    } else {
        T::one().min(amplitude / (n - amplitude * w2))
    };
    let mixing = Mixing::Block { range, decay, amplitude, latent_weight: b2.sqrt(), offsets };
    build(d, kappa, mean_kernel, family, disorder_target, mixing)
}

impl<T: Real> EnvLaw<T> {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn kappa(&self) -> T {
        self.kappa
    }

    pub fn mean_kernel(&self) -> &SiteKernel<T> {
        &self.mean
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn family(&self) -> &MarginalFamily<T> {
        &self.family
    }

    pub fn mixing(&self) -> &Mixing<T> {
        &self.mixing
    }

    pub fn is_iid(&self) -> bool {
        matches!(self.mixing, Mixing::Iid)
    }

    /// Mixing range, or `None` for iid laws.
    pub fn mixing_range(&self) -> Option<usize> {
        match &self.mixing {
            Mixing::Iid => None,
            Mixing::Block { range, .. } => Some(*range),
        }
    }

    pub fn latent_weight(&self) -> T {
        match &self.mixing {
            Mixing::Iid => T::zero(),
            Mixing::Block { latent_weight, .. } => *latent_weight,
        }
    }

    /// Same law with a different disorder level.
    pub fn with_delta(&self, delta: T) -> Result<Self> {
        build(self.d, self.kappa, self.mean.clone(), self.family.clone(), delta, self.mixing.clone())
    }

    /// Shape vector `a(x, .)` of the environment with the given seed.
    pub fn shape_at(&self, seed: u64, x: &[i64], out: &mut [T]) {
        let u = site_uniform(seed, STREAM_INNOVATION, x, 0);
        self.family.draw(u, out);
        if let Mixing::Block { latent_weight, offsets, .. } = &self.mixing {
            if *latent_weight == T::zero() {
                return;
            }
            let mut buf = vec![T::zero(); out.len()];
            let mut y = x.to_vec();
            let mut norm = T::one();
            for (off, w) in offsets {
                for ((yc, &xc), &o) in y.iter_mut().zip(x).zip(off) {
                    *yc = xc + o;
                }
                self.family.draw(site_uniform(seed, STREAM_LATENT, &y, 0), &mut buf);
                let bw = *latent_weight * *w;
                out.iter_mut().zip(&buf).for_each(|(a, &z)| *a = *a + bw * z);
                norm = norm + bw;
            }
            out.iter_mut().for_each(|a| *a = *a / norm);
        }
    }

    /// Writes the kernel at `x` into `out`; returns `true` if the ellipticity
    /// clamp had to fire (never for a law that passed construction).
    pub fn kernel_at(&self, seed: u64, x: &[i64], out: &mut [T]) -> bool {
        self.shape_at(seed, x, out);
        let mut clamped = false;
        for (o, &m) in out.iter_mut().zip(self.mean.as_slice()) {
            *o = m * (T::one() + self.delta * *o);
            if *o < self.kappa {
                *o = self.kappa;
                clamped = true;
            }
        }
        let sum: T = out.iter().copied().sum();
        out.iter_mut().for_each(|o| *o = *o / sum);
        clamped
    }

    /// `E[omega(0, .)]` as produced by [`EnvLaw::kernel_at`]: the mean kernel
    /// renormalized in the same floating-point order, so a zero-disorder
    /// sample reproduces it bit for bit.
    pub fn effective_mean(&self) -> Vec<T> {
        let m = self.mean.as_slice();
        let sum: T = m.iter().copied().sum();
        m.iter().map(|&p| p / sum).collect()
    }

    /// Exact disorder of the law: `sup |xi - 1|` over the support.
    pub fn disorder(&self) -> T {
        (0..2 * self.d)
            .map(|e| {
                let (lo, hi) = self.family.range(e);
                lo.abs().max(hi.abs())
            })
            .fold(T::zero(), T::max)
            * self.delta
    }

    /// Exact imbalance of the law in orthant `s`.
    pub fn imbalance(&self, s: &SignVector) -> T {
        let dirs = s.allowed();
        let m = self.mean.as_slice();
        let total: T = dirs.iter().map(|e| m[e.index()]).sum();
        self.family
            .extreme_shapes()
            .iter()
            .map(|a| (dirs.iter().map(|e| m[e.index()] * a[e.index()]).sum::<T>() / total).abs())
            .fold(T::zero(), T::max)
            * self.delta
    }

    /// Support of the iid site kernel as `(weight, kernel)` pairs, when it is
    /// finite. Mixing laws and continuous families return `None`.
    pub fn site_kernel_support(&self) -> Option<Vec<(T, Vec<T>)>> {
        if !self.is_iid() {
            return None;
        }
        let atoms = self.family.support()?;
        Some(
            atoms
                .into_iter()
                .map(|a| {
                    let k = a
                        .shape
                        .iter()
                        .zip(self.mean.as_slice())
                        .map(|(&c, &m)| m * (T::one() + self.delta * c))
                        .collect();
                    (a.weight, k)
                })
                .collect(),
        )
    }
}
