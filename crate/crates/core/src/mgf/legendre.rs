//! Grid Legendre-Fenchel conjugation and derived rates.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::lattice::SignVector;
use crate::{Error, Real, Result};

/// `Lambda*(x) = max_theta <theta, x> - Lambda(theta)` on a finite grid,
/// with the maximizing theta and whether it sits on the grid boundary (in
/// which case the conjugate is underestimated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugateGrid<T> {
    pub xs: Vec<Vec<T>>,
    pub star_vals: Vec<T>,
    pub exposing_thetas: Vec<Vec<T>>,
    pub edge_flags: Vec<bool>,
}

impl<T: Real> ConjugateGrid<T> {
    pub fn any_edge(&self) -> bool {
        self.edge_flags.iter().any(|&f| f)
    }

    /// Value at the grid point closest to `x`.
    pub fn at(&self, x: &[T]) -> Option<(T, bool)> {
        let dist = |p: &Vec<T>| p.iter().zip(x).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>();
        let (i, _) = self
            .xs
            .iter()
            .enumerate()
            .min_by(|a, b| dist(a.1).partial_cmp(&dist(b.1)).unwrap())?;
        Some((self.star_vals[i], self.edge_flags[i]))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let k = self.xs.first().map_or(0, Vec::len);
        let mut cols: Vec<String> = (1..=k).map(|i| format!("x_{i}")).collect();
        cols.push("star_val".into());
        cols.extend((1..=k).map(|i| format!("argmax_theta_{i}")));
        cols.push("edge_flag".into());
        writeln!(w, "{}", cols.join(","))?;
        for i in 0..self.xs.len() {
            let mut row: Vec<String> = self.xs[i].iter().map(|v| v.to_string()).collect();
            row.push(self.star_vals[i].to_string());
            row.extend(self.exposing_thetas[i].iter().map(|v| v.to_string()));
            row.push(self.edge_flags[i].to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn grid_bounds<T: Real>(pts: &[Vec<T>]) -> Vec<(T, T)> {
    let k = pts.first().map_or(0, Vec::len);
    (0..k)
        .map(|i| {
            pts.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), p| (lo.min(p[i]), hi.max(p[i])))
        })
        .collect()
}

fn on_edge<T: Real>(p: &[T], bounds: &[(T, T)]) -> bool {
    p.iter().zip(bounds).any(|(&v, &(lo, hi))| lo < hi && (v == lo || v == hi))
}

/// Conjugates grid values `values[i] = Lambda(thetas[i])` at each `x`.
pub fn legendre<T: Real>(thetas: &[Vec<T>], values: &[T], xs: &[Vec<T>]) -> Result<ConjugateGrid<T>> {
    if thetas.is_empty() || thetas.len() != values.len() {
        return Err(Error::InvalidArgument("theta grid and values must be nonempty and aligned".into()));
    }
    let k = thetas[0].len();
    if let Some(bad) = xs.iter().chain(thetas).find(|p| p.len() != k) {
        return Err(Error::DimensionMismatch { expected: k, got: bad.len() });
    }
    let bounds = grid_bounds(thetas);
    let mut out = ConjugateGrid { xs: xs.to_vec(), star_vals: Vec::new(), exposing_thetas: Vec::new(), edge_flags: Vec::new() };
    for x in xs {
        let mut best = (T::neg_infinity(), 0);
        for (i, (th, &v)) in thetas.iter().zip(values).enumerate() {
            let f = th.iter().zip(x).map(|(&a, &b)| a * b).sum::<T>() - v;
            if f > best.0 {
                best = (f, i);
            }
        }
        out.star_vals.push(best.0);
        out.exposing_thetas.push(thetas[best.1].clone());
        out.edge_flags.push(on_edge(&thetas[best.1], &bounds));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IaZero<T> {
    /// `-log min_theta max_p sum_e e^{<theta,e>} p(e)`; an upper bound on the
    /// rate when `kernel_set` only samples the hull.
    pub value: T,
    pub argmin: Vec<T>,
    /// The grid minimizer was on the grid boundary.
    pub edge_flag: bool,
}

fn hull_sup(kernels: &[Vec<f64>], theta: &[f64]) -> f64 {
    kernels
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &q)| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            q * (sign * theta[i / 2]).exp()
        }).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Annealed rate at the origin from a finite set of one-step kernels: grid
/// search for the minimax, then compass refinement of the (convex) objective.
pub fn ia_zero<T: Real>(kernel_set: &[Vec<T>], theta_grid: &[Vec<T>]) -> Result<IaZero<T>> {
    let first = kernel_set.first().ok_or_else(|| Error::InvalidArgument("empty kernel set".into()))?;
    let d = first.len() / 2;
    let tol = crate::lattice::SiteKernel::<T>::tolerance().to_f64_lossy();
    let mut ks = Vec::with_capacity(kernel_set.len());
    for p in kernel_set {
        let sum: T = p.iter().copied().sum();
        if p.len() != 2 * d || p.iter().any(|&v| v < T::zero()) || (sum.to_f64_lossy() - 1.0).abs() > tol {
            return Err(Error::InvalidKernel(format!("{p:?} is not a probability vector on 2d = {} directions", 2 * d)));
        }
        ks.push(p.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>());
    }
    if theta_grid.is_empty() || theta_grid.iter().any(|t| t.len() != d) {
        return Err(Error::InvalidArgument(format!("theta grid must be nonempty with points in R^{d}")));
    }
    let grid: Vec<Vec<f64>> = theta_grid.iter().map(|t| t.iter().map(|v| v.to_f64_lossy()).collect()).collect();
    let (gi, _) = grid
        .iter()
        .map(|t| hull_sup(&ks, t))
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    let edge_flag = on_edge(&grid[gi], &grid_bounds(&grid));
    let mut theta = grid[gi].clone();
    let mut f = hull_sup(&ks, &theta);
    let spread = grid_bounds(&grid).iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
    let mut step = (spread / (grid.len() as f64).powf(1.0 / d.max(1) as f64)).max(1e-3);
    while step > 1e-13 {
        let mut moved = false;
        for i in 0..d {
            for sign in [1.0, -1.0] {
                let mut cand = theta.clone();
                cand[i] += sign * step;
                let fc = hull_sup(&ks, &cand);
                if fc < f {
                    theta = cand;
                    f = fc;
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    Ok(IaZero { value: T::lit(-f.ln()), argmin: theta.into_iter().map(T::lit).collect(), edge_flag })
}

/// A rate value pulled back to the boundary face of the velocity surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint<T> {
    /// Velocity in `R^d` with `<x, s> = 1`.
    pub velocity: Vec<T>,
    pub rate: T,
    pub edge: bool,
    /// The preimage has nonnegative weights on every axis of `V_s`.
    pub on_face: bool,
}

/// Pulls `Lambda*(y)` back along the projection: a face point with axis
/// weights `a_j >= 0`, `sum a_j = 1`, projects to `y_j = a_j - a_d`.
pub fn boundary_rate<T: Real>(conj: &ConjugateGrid<T>, s: &SignVector) -> Vec<BoundaryPoint<T>> {
    let d = s.dim();
    conj.xs
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let a_d = (T::one() - y.iter().copied().sum::<T>()) / T::of_usize(d);
            let weights: Vec<T> = y.iter().map(|&v| v + a_d).chain(std::iter::once(a_d)).collect();
            let eps = T::lit(1e-12);
            BoundaryPoint {
                velocity: weights.iter().zip(s.signs()).map(|(&a, &sg)| a * T::from_i64(sg as i64).unwrap()).collect(),
                rate: conj.star_vals[i],
                edge: conj.edge_flags[i],
                on_face: weights.iter().all(|&a| a >= -eps),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mgf::product_grid;

    fn logcosh_grid() -> (Vec<Vec<f64>>, Vec<f64>) {
        let thetas = product_grid::<f64>(1, -4.0, 4.0, 8001);
        let vals = thetas.iter().map(|t| t[0].cosh().ln()).collect();
        (thetas, vals)
    }

    #[test]
    fn log_cosh_conjugate() {
        let (th, v) = logcosh_grid();
        let c = legendre(&th, &v, &[vec![0.0], vec![0.5]]).unwrap();
        assert!(c.star_vals[0].abs() < 1e-12);
        assert!(c.exposing_thetas[0][0].abs() < 1e-12);
        let a = 0.5f64.atanh();
        let exact = 0.5 * a - a.cosh().ln();
        assert!((exact - 0.130812).abs() < 1e-6);
        assert!((c.star_vals[1] - exact).abs() < 1e-3);
        assert!(!c.any_edge());
    }

    #[test]
    fn double_conjugate_recovers_convex_function() {
        let (th, v) = logcosh_grid();
        let xs = product_grid::<f64>(1, -0.999, 0.999, 1999);
        let c = legendre(&th, &v, &xs).unwrap();
        let back = legendre(&xs, &c.star_vals, &[vec![-1.0], vec![0.3], vec![1.5]]).unwrap();
        for (t, b) in [-1.0f64, 0.3, 1.5].iter().zip(&back.star_vals) {
            assert!((b - t.cosh().ln()).abs() < 1e-3, "{t} {b}");
        }
    }

    #[test]
    fn affine_mgf_flags_edge() {
        let th = product_grid::<f64>(1, -2.0, 2.0, 401);
        let v: Vec<f64> = th.iter().map(|t| 0.3 * t[0]).collect();
        let c = legendre(&th, &v, &[vec![0.3], vec![0.8]]).unwrap();
        assert!(c.star_vals[0].abs() < 1e-12);
        assert!(c.edge_flags[1]);
        assert!(c.star_vals[1] > 0.0);
    }

    #[test]
    fn ia_zero_examples() {
        let grid = product_grid::<f64>(1, -2.0, 2.0, 41);
        let u = ia_zero(&[vec![0.5, 0.5]], &grid).unwrap();
        assert!(u.value.abs() < 1e-12);
        let p = ia_zero(&[vec![0.7, 0.3]], &grid).unwrap();
        let exact = -(2.0 * (0.21f64).sqrt()).ln();
        assert!((p.value - exact).abs() < 1e-9);
        assert!((p.argmin[0] - 0.5 * (0.3f64 / 0.7).ln()).abs() < 1e-5);
        let both = ia_zero(&[vec![0.7, 0.3], vec![0.3, 0.7]], &grid).unwrap();
        assert!(both.value.abs() < 1e-12);
        let g2 = product_grid::<f64>(2, -2.0, 2.0, 21);
        let u2 = ia_zero(&[vec![0.25; 4]], &g2).unwrap();
        assert!(u2.value.abs() < 1e-12);
        assert!(ia_zero::<f64>(&[], &grid).is_err());
        assert!(ia_zero(&[vec![0.7, 0.4]], &grid).is_err());
    }

    #[test]
    fn boundary_rate_srw() {
        let th = product_grid::<f64>(1, -12.0, 12.0, 24001);
        let v: Vec<f64> = th.iter().map(|t| (0.25 * (t[0].exp() + (-t[0]).exp())).ln()).collect();
        let s = SignVector::all_positive(2);
        let c = legendre(&th, &v, &[vec![0.0], vec![1.0], vec![0.5]]).unwrap();
        let b = boundary_rate(&c, &s);
        assert_eq!(b[0].velocity, vec![0.5, 0.5]);
        assert!((b[0].rate - 2f64.ln()).abs() < 1e-9);
        assert_eq!(b[1].velocity, vec![1.0, 0.0]);
        assert!(b[1].edge);
        assert!((b[1].rate - 4f64.ln()).abs() < 1e-4);
        assert!(b.iter().all(|p| p.on_face));
        // adjacent grid points differ by at most the theta extent times the spacing
        assert!((b[2].rate - b[0].rate).abs() <= 12.0 * 0.5);
    }
}
