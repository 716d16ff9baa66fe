//! Logarithmic moment generating functions on the boundary event `B_n`
//! (every step in `V_s`), their Legendre conjugates, the `psi^s` sandwich,
//! and the annealed zero-velocity rate.

pub(crate) mod directed;
mod legendre;

pub use legendre::{boundary_rate, ia_zero, legendre, BoundaryPoint, ConjugateGrid, IaZero};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::lattice::{Direction, EnvLaw, KernelField, LawField, SignVector};
use crate::rng::derive_seed;
use crate::stats::{mean_stderr, sample_covariance, sample_variance};
use crate::walk::pi_dot;
use crate::{par, Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MgfKind {
    Quenched,
    Annealed,
}

impl std::fmt::Display for MgfKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MgfKind::Quenched => "quenched",
            MgfKind::Annealed => "annealed",
        })
    }
}

/// Estimates of a log-MGF on a theta grid. `cis` are one standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgfGrid<T> {
    pub thetas: Vec<Vec<T>>,
    pub estimates: Vec<T>,
    pub cis: Vec<T>,
    pub n_used: usize,
    pub kind: MgfKind,
}

impl<T: Real> MgfGrid<T> {
    /// Crude a priori bound `|Lambda(theta)| <= |theta|_2 (d-1) + log(1/kappa)`.
    pub fn within_crude_bound(&self, kappa: T) -> bool {
        self.thetas.iter().zip(&self.estimates).all(|(th, &v)| {
            let norm = th.iter().map(|&t| t * t).sum::<T>().sqrt();
            v.is_finite() && v.abs() <= norm * T::of_usize(th.len().max(1)) + (T::one() / kappa).ln()
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let k = self.thetas.first().map_or(0, Vec::len);
        let mut cols: Vec<String> = (1..=k).map(|i| format!("theta_{i}")).collect();
        cols.extend(["kind", "n", "estimate", "ci"].map(String::from));
        writeln!(w, "{}", cols.join(","))?;
        for ((th, e), c) in self.thetas.iter().zip(&self.estimates).zip(&self.cis) {
            let mut row: Vec<String> = th.iter().map(|t| t.to_string()).collect();
            row.extend([self.kind.to_string(), self.n_used.to_string(), e.to_string(), c.to_string()]);
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Cartesian grid of `points` values per axis on `[lo, hi]^dim`. For
/// `dim = 0` the grid is the single empty vector.
pub fn product_grid<T: Real>(dim: usize, lo: f64, hi: f64, points: usize) -> Vec<Vec<T>> {
    let axis: Vec<T> = if points <= 1 {
        vec![T::lit(0.5 * (lo + hi))]
    } else {
        (0..points).map(|i| T::lit(lo + (hi - lo) * i as f64 / (points - 1) as f64)).collect()
    };
    let mut out = vec![Vec::new()];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}

/// `psi^s(theta) = sum_{e in V_s} e^{<theta, pi(e)>} E[omega(0, e)]`.
pub fn psi_s<T: Real>(law: &EnvLaw<T>, s: &SignVector, theta: &[T]) -> T {
    psi_s_kernel(&law.effective_mean(), s, theta)
}

pub fn psi_s_kernel<T: Real>(mean: &[T], s: &SignVector, theta: &[T]) -> T {
    s.allowed().into_iter().map(|e| pi_dot(s, e, theta).exp() * mean[e.index()]).sum()
}

/// `grad log psi^s(theta)`.
pub fn grad_log_psi_s<T: Real>(mean: &[T], s: &SignVector, theta: &[T]) -> Vec<T> {
    let psi = psi_s_kernel(mean, s, theta);
    let mut g = vec![T::zero(); s.dim() - 1];
    for e in s.allowed() {
        let w = pi_dot(s, e, theta).exp() * mean[e.index()];
        for (gi, &c) in g.iter_mut().zip(&crate::walk::pi_step(s, e)) {
            *gi = *gi + T::from_i64(c).unwrap() * w;
        }
    }
    g.into_iter().map(|v| v / psi).collect()
}

/// `log E_{0,omega}[e^{<theta, S_n>} 1_{B_n}]` for every theta in `thetas`,
/// by exact level-by-level propagation with per-level rescaling.
pub fn directed_log_z<T: Real, F: KernelField<T> + ?Sized>(
    field: &F,
    s: &SignVector,
    thetas: &[Vec<T>],
    n: usize,
) -> Result<Vec<T>> {
    let d = field.dim();
    if s.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: s.dim() });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let dm1 = d - 1;
    let nt = thetas.len();
    let steps = directed::steps(s);
    let tilt: Vec<Vec<T>> = thetas.iter().map(|th| steps.iter().map(|&e| pi_dot(s, e, th).exp()).collect()).collect();
    let mut log_acc = vec![T::zero(); nt];
    let mut cur = vec![T::one(); nt];
    let mut c = vec![0usize; dm1];
    let mut x = vec![0i64; d];
    let mut k = vec![T::zero(); 2 * d];
    for j in 0..n {
        let mut next = vec![T::zero(); directed::level_len(dm1, j + 1) * nt];
        for idx in 0..directed::level_len(dm1, j) {
            if !directed::decode(idx, j, dm1, &mut c) {
                continue;
            }
            directed::site(s, &c, j, &mut x);
            field.kernel_into(&x, &mut k)?;
            for (a, e) in steps.iter().enumerate() {
                let ni = directed::next_index(&mut c, a, j);
                let p = k[e.index()];
                for t in 0..nt {
                    next[ni * nt + t] = next[ni * nt + t] + cur[idx * nt + t] * p * tilt[t][a];
                }
            }
        }
        for t in 0..nt {
            let m = next.iter().skip(t).step_by(nt).fold(T::zero(), |a, &b| a.max(b));
            if m > T::zero() {
                next.iter_mut().skip(t).step_by(nt).for_each(|v| *v = *v / m);
                log_acc[t] = log_acc[t] + m.ln();
            } else {
                log_acc[t] = T::neg_infinity();
            }
        }
        cur = next;
    }
    Ok((0..nt)
        .map(|t| log_acc[t] + cur.iter().skip(t).step_by(nt).copied().sum::<T>().ln())
        .collect())
}

/// `Lambda_{q,omega}` at finite `n`: `(1/n) log E_{0,omega}[e^{<theta,S_n>} 1_{B_n}]`.
pub fn lambda_q_boundary<T: Real, F: KernelField<T> + ?Sized>(field: &F, s: &SignVector, theta: &[T], n: usize) -> Result<T> {
    Ok(directed_log_z(field, s, &[theta.to_vec()], n)?[0] / T::of_usize(n))
}

/// `log E_{0,omega}[e^{<theta, X_n>}]` without the boundary restriction.
pub fn full_log_z<T: Real, F: KernelField<T> + ?Sized>(field: &F, thetas: &[Vec<T>], n: usize) -> Result<Vec<T>> {
    let d = field.dim();
    let nt = thetas.len();
    let window = crate::lattice::Window::centered(d, n);
    let dirs: Vec<Direction> = Direction::all(d).collect();
    let tilt: Vec<Vec<T>> = thetas.iter().map(|th| dirs.iter().map(|e| e.dot(th).exp()).collect()).collect();
    let origin = vec![0i64; d];
    let mut cur = vec![T::zero(); window.len() * nt];
    let o = window.index_of(&origin).unwrap();
    cur[o * nt..(o + 1) * nt].iter_mut().for_each(|v| *v = T::one());
    let mut log_acc = vec![T::zero(); nt];
    let mut k = vec![T::zero(); 2 * d];
    for _ in 0..n {
        let mut next = vec![T::zero(); window.len() * nt];
        for idx in 0..window.len() {
            if cur[idx * nt..(idx + 1) * nt].iter().all(|v| v.is_zero()) {
                continue;
            }
            let x = window.site(idx);
            field.kernel_into(&x, &mut k)?;
            for (a, e) in dirs.iter().enumerate() {
                let mut y = x.clone();
                e.step(&mut y);
                let ni = window.index_of(&y).expect("ball of radius n fits the window");
                for t in 0..nt {
                    next[ni * nt + t] = next[ni * nt + t] + cur[idx * nt + t] * k[e.index()] * tilt[t][a];
                }
            }
        }
        for t in 0..nt {
            let m = next.iter().skip(t).step_by(nt).fold(T::zero(), |a, &b| a.max(b));
            next.iter_mut().skip(t).step_by(nt).for_each(|v| *v = *v / m);
            log_acc[t] = log_acc[t] + m.ln();
        }
        cur = next;
    }
    Ok((0..nt)
        .map(|t| log_acc[t] + cur.iter().skip(t).step_by(nt).copied().sum::<T>().ln())
        .collect())
}

/// Per-replica `log Z` values for every theta, one row per replica.
fn replica_log_z<T: Real>(
    law: &EnvLaw<T>,
    replicas: usize,
    seed: u64,
    eval: impl Fn(&LawField<'_, T>) -> Result<Vec<T>> + Sync + Send,
) -> Result<Vec<Vec<f64>>> {
    if replicas == 0 {
        return Err(Error::EmptyRun);
    }
    par::try_replicas(replicas, |r| {
        let field = LawField::new(law, derive_seed(seed, r as u64));
        Ok(eval(&field)?.into_iter().map(|v| v.to_f64_lossy()).collect())
    })
}

/// `(1/n) log mean_r e^{log_z[r]}` with a delta-method standard error.
fn annealed_from_logs(log_z: &[f64], n: usize) -> (f64, f64) {
    let shift = log_z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: Vec<f64> = log_z.iter().map(|l| (l - shift).exp()).collect();
    let ms = mean_stderr(&z);
    ((shift + ms.mean.ln()) / n as f64, ms.stderr / ms.mean / n as f64)
}

/// Annealed and replica-averaged quenched boundary MGFs on a shared set of
/// environment replicas (common random numbers across theta).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMgf<T> {
    pub annealed: MgfGrid<T>,
    pub quenched_mean: MgfGrid<T>,
    /// `Lambda_{q,omega}` per replica, per theta.
    pub quenched: Vec<Vec<T>>,
}

/// `Lambda_a(theta) ~ (1/n) log E[E_{0,omega}[e^{<theta,S_n>} 1_{B_n}]]` by
/// Monte Carlo over environments, each evaluated exactly by the directed DP.
pub fn lambda_a_boundary<T: Real>(
    law: &EnvLaw<T>,
    s: &SignVector,
    thetas: &[Vec<T>],
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<BoundaryMgf<T>> {
    let logs = replica_log_z(law, replicas, seed, |f| directed_log_z(f, s, thetas, n))?;
    let mut ann = (Vec::new(), Vec::new());
    let mut que = (Vec::new(), Vec::new());
    for t in 0..thetas.len() {
        let col: Vec<f64> = logs.iter().map(|r| r[t]).collect();
        let (e, c) = annealed_from_logs(&col, n);
        ann.0.push(T::lit(e));
        ann.1.push(T::lit(c));
        let q: Vec<f64> = col.iter().map(|l| l / n as f64).collect();
        let ms = mean_stderr(&q);
        que.0.push(T::lit(ms.mean));
        que.1.push(T::lit(ms.stderr));
    }
    let grid = |(estimates, cis), kind| MgfGrid { thetas: thetas.to_vec(), estimates, cis, n_used: n, kind };
    Ok(BoundaryMgf {
        annealed: grid(ann, MgfKind::Annealed),
        quenched_mean: grid(que, MgfKind::Quenched),
        quenched: logs.iter().map(|r| r.iter().map(|&l| T::lit(l / n as f64)).collect()).collect(),
    })
}

/// Unrestricted annealed log-MGF `(1/n) log E[E_{0,omega}[e^{<theta,X_n>}]]`.
pub fn lambda_a_full<T: Real>(law: &EnvLaw<T>, thetas: &[Vec<T>], n: usize, replicas: usize, seed: u64) -> Result<MgfGrid<T>> {
    let logs = replica_log_z(law, replicas, seed, |f| full_log_z(f, thetas, n))?;
    let (mut estimates, mut cis) = (Vec::new(), Vec::new());
    for t in 0..thetas.len() {
        let col: Vec<f64> = logs.iter().map(|r| r[t]).collect();
        let (e, c) = annealed_from_logs(&col, n);
        estimates.push(T::lit(e));
        cis.push(T::lit(c));
    }
    Ok(MgfGrid { thetas: thetas.to_vec(), estimates, cis, n_used: n, kind: MgfKind::Annealed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichRow {
    pub theta: Vec<f64>,
    pub component: usize,
    pub gradient: f64,
    pub stderr: f64,
    pub lower: f64,
    pub upper: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub disorder: f64,
    pub h: f64,
    pub rows: Vec<SandwichRow>,
}

impl SandwichReport {
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| r.violated).count()
    }
}

/// Tests `(1 - dis) grad log psi^s <= grad Lambda_a <= (1 + dis) grad log psi^s`
/// componentwise (bounds ordered by sign), with `grad Lambda_a` from central
/// differences of step `h` on common replicas. A component is a violation
/// when it leaves the band by more than `3 stderr + 2 h^2`.
pub fn gradient_sandwich_check<T: Real>(
    law: &EnvLaw<T>,
    s: &SignVector,
    thetas: &[Vec<T>],
    n: usize,
    replicas: usize,
    seed: u64,
    h: f64,
) -> Result<SandwichReport> {
    let k = s.dim() - 1;
    let mut shifted = Vec::with_capacity(thetas.len() * k * 2);
    for th in thetas {
        for i in 0..k {
            for sign in [1.0, -1.0] {
                let mut p = th.clone();
                p[i] = p[i] + T::lit(sign * h);
                shifted.push(p);
            }
        }
    }
    let logs = replica_log_z(law, replicas, seed, |f| directed_log_z(f, s, &shifted, n))?;
    let mean = law.effective_mean();
    let dis = law.disorder().to_f64_lossy();
    let mut rows = Vec::new();
    for (ti, th) in thetas.iter().enumerate() {
        let g = grad_log_psi_s(&mean, s, th);
        for i in 0..k {
            let col = |j: usize| -> Vec<f64> { logs.iter().map(|r| r[j]).collect() };
            let (lp, lm) = (col((ti * k + i) * 2), col((ti * k + i) * 2 + 1));
            let shift = lp.iter().chain(&lm).copied().fold(f64::NEG_INFINITY, f64::max);
            let zp: Vec<f64> = lp.iter().map(|l| (l - shift).exp()).collect();
            let zm: Vec<f64> = lm.iter().map(|l| (l - shift).exp()).collect();
            let (a, b) = (mean_stderr(&zp).mean, mean_stderr(&zm).mean);
            let scale = 2.0 * h * n as f64;
            let gradient = (a.ln() - b.ln()) / scale;
            let var = (sample_variance(&zp) / (a * a) + sample_variance(&zm) / (b * b)
                - 2.0 * sample_covariance(&zp, &zm) / (a * b))
                / replicas as f64;
            let stderr = var.max(0.0).sqrt() / scale;
            let gi = g[i].to_f64_lossy();
            let (b1, b2) = ((1.0 - dis) * gi, (1.0 + dis) * gi);
            let (lower, upper) = (b1.min(b2), b1.max(b2));
            let tol = 3.0 * stderr + 2.0 * h * h;
            rows.push(SandwichRow {
                theta: th.iter().map(|t| t.to_f64_lossy()).collect(),
                component: i,
                gradient,
                stderr,
                lower,
                upper,
                violated: gradient < lower - tol || gradient > upper + tol,
            });
        }
    }
    Ok(SandwichReport { disorder: dis, h, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_iid_law, BoundaryPolicy, Environment, MarginalFamily, SiteKernel, Window};

    fn srw2(delta: f64) -> EnvLaw<f64> {
        make_iid_law::<f64>(2, 0.1, SiteKernel::uniform(2), MarginalFamily::two_point(), delta).unwrap()
    }

    #[test]
    fn grid_shapes() {
        assert_eq!(product_grid::<f64>(0, -1.0, 1.0, 11), vec![Vec::<f64>::new()]);
        let g = product_grid::<f64>(2, -1.0, 1.0, 3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![-1.0, -1.0]);
        assert_eq!(g[8], vec![1.0, 1.0]);
    }

    #[test]
    fn psi_examples() {
        let s = SignVector::all_positive(2);
        let law = srw2(0.0);
        assert!((psi_s(&law, &s, &[0.0]) - 0.5).abs() < 1e-15);
        let t = 0.7f64;
        assert!((psi_s(&law, &s, &[t]) - 0.25 * (t.exp() + (-t).exp())).abs() < 1e-15);
        let law4 = make_iid_law::<f64>(4, 0.05, SiteKernel::uniform(4), MarginalFamily::two_point(), 0.0).unwrap();
        let s4 = SignVector::all_positive(4);
        assert!((psi_s(&law4, &s4, &[0.0; 3]) - 0.5).abs() < 1e-15);
        assert!(grad_log_psi_s(&law4.effective_mean(), &s4, &[0.0; 3]).iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn sign_flip_mirrors_gradient() {
        let mean = vec![0.3, 0.2, 0.35, 0.15];
        let s = SignVector::new(vec![1, -1]).unwrap();
        for t in [-0.8, 0.0, 0.4] {
            let a = grad_log_psi_s(&mean, &s, &[t])[0];
            let b = grad_log_psi_s(&mean, &s.negated(), &[-t])[0];
            // psi^{-s}(theta) has the two orthant masses swapped
            let direct = {
                let (p1, p2) = (mean[1], mean[2]);
                (p1 * (-t as f64).exp() - p2 * t.exp()) / (p1 * (-t as f64).exp() + p2 * t.exp())
            };
            assert!((b - direct).abs() < 1e-14, "{a} {b} {direct}");
        }
    }

    #[test]
    fn srw_boundary_mgf_is_log_half() {
        let law = srw2(0.0);
        let s = SignVector::all_positive(2);
        let f = LawField::new(&law, 1);
        let v = lambda_q_boundary(&f, &s, &[0.0], 40).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn deterministic_factorization() {
        let mean = SiteKernel::new(vec![0.4, 0.1, 0.3, 0.2]).unwrap();
        let env = Environment::homogeneous(Window::centered(2, 2), &mean, BoundaryPolicy::MeanFill);
        let s = SignVector::all_positive(2);
        for n in [1, 5, 17] {
            let v = lambda_q_boundary(&env, &s, &[0.3], n).unwrap();
            let want = (0.4 * 0.3f64.exp() + 0.3 * (-0.3f64).exp()).ln();
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn one_step_matches_direct() {
        let law = srw2(0.2);
        let f = LawField::new(&law, 9);
        let s = SignVector::new(vec![-1, 1]).unwrap();
        let mut k = [0.0; 4];
        f.kernel_into(&[0, 0], &mut k).unwrap();
        let th = 0.37f64;
        let direct = (k[1] * th.exp() + k[2] * (-th as f64).exp()).ln();
        assert!((lambda_q_boundary(&f, &s, &[th], 1).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn three_dim_level_count() {
        // theta = 0: directed SRW mass (1/2)^n irrespective of the geometry
        let law = make_iid_law::<f64>(3, 0.1, SiteKernel::uniform(3), MarginalFamily::two_point(), 0.0).unwrap();
        let s = SignVector::new(vec![1, 1, -1]).unwrap();
        let v = lambda_q_boundary(&LawField::new(&law, 0), &s, &[0.0, 0.0], 12).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_disorder_collapse() {
        let law = srw2(0.0);
        let s = SignVector::all_positive(2);
        let thetas = product_grid(1, -1.0, 1.0, 5);
        let m = lambda_a_boundary(&law, &s, &thetas, 16, 20, 3).unwrap();
        for (i, th) in thetas.iter().enumerate() {
            let lp = psi_s(&law, &s, th).ln();
            assert!((m.annealed.estimates[i] - lp).abs() < 1e-10);
            assert!((m.quenched_mean.estimates[i] - lp).abs() < 1e-10);
        }
        assert!(m.annealed.within_crude_bound(0.1));
    }

    #[test]
    fn iid_annealed_matches_psi() {
        let law = srw2(0.2);
        let s = SignVector::all_positive(2);
        let thetas = product_grid(1, -1.0, 1.0, 5);
        let m = lambda_a_boundary(&law, &s, &thetas, 32, 2000, 11).unwrap();
        for (i, th) in thetas.iter().enumerate() {
            let lp = psi_s(&law, &s, th).ln();
            assert!((m.annealed.estimates[i] - lp).abs() <= 3.0 * m.annealed.cis[i] + 1e-12);
            assert!(m.annealed.estimates[i] >= m.quenched_mean.estimates[i] - 3.0 * m.annealed.cis[i]);
        }
    }

    #[test]
    fn empty_run_rejected() {
        let law = srw2(0.1);
        let s = SignVector::all_positive(2);
        assert_eq!(lambda_a_boundary(&law, &s, &[vec![0.0]], 4, 0, 0).unwrap_err(), Error::EmptyRun);
    }

    #[test]
    fn full_lattice_zero_disorder() {
        let law = make_iid_law::<f64>(1, 0.1, SiteKernel::one_dim(0.7).unwrap(), MarginalFamily::two_point(), 0.0).unwrap();
        let thetas = vec![vec![-0.5], vec![0.0], vec![0.8]];
        let g = lambda_a_full(&law, &thetas, 10, 3, 0).unwrap();
        for (i, th) in thetas.iter().enumerate() {
            let want = (0.7 * th[0].exp() + 0.3 * (-th[0]).exp()).ln();
            assert!((g.estimates[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn sandwich_collapses_at_zero_disorder() {
        let law = srw2(0.0);
        let s = SignVector::all_positive(2);
        let r = gradient_sandwich_check(&law, &s, &product_grid(1, -1.0, 1.0, 5), 8, 10, 0, 0.01).unwrap();
        assert_eq!(r.violations(), 0);
        for row in &r.rows {
            assert!((row.gradient - row.lower).abs() < 1e-4);
        }
    }

    #[test]
    fn mgf_csv_header() {
        let g = MgfGrid { thetas: vec![vec![0.0]], estimates: vec![1.0], cis: vec![0.0], n_used: 3, kind: MgfKind::Quenched };
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("theta_1,kind,n,estimate,ci\n0,quenched,3,1,0"));
    }
}
