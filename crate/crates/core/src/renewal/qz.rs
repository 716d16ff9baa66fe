//! The homogeneous tilted walk `Q^z` with kernel
//! `2 u_z(e) = <z,e> + sqrt(<z,e>^2 + 4 C_z m(e) m(-e))`, its exact
//! change-of-measure identity against the random walk, the coupled
//! simulation with its renewal scaffolding, and derived checks.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{detect_tau, draw_tag, EpsTag, RenewalRecord};
use crate::lattice::{Direction, EnvLaw, KernelField, LawField, SiteKernel};
use crate::mgf::legendre;
use crate::rng::{derive_seed, replica_rng};
use crate::stats::mean_stderr;
use crate::walk::{in_cone, sample_direction, Trajectory};
use crate::{par, Error, Real, Result};

/// Tilt parameters for a target velocity `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QzTilt<T> {
    pub z: Vec<T>,
    /// `m(e) = E[omega(0, e)]`.
    pub mean: Vec<T>,
    pub c_z: T,
    pub u_z: SiteKernel<T>,
    /// `sqrt(C_z)`.
    pub d_z: T,
    pub theta_z: Vec<T>,
}

/// Absolute residuals of the defining relations of a tilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltResiduals {
    pub f_minus_one: f64,
    pub sum_minus_one: f64,
    pub mean_error: f64,
    /// `max_e |u(e) - D m(e) e^{<theta_z, e>}|`.
    pub consistency: f64,
}

impl TiltResiduals {
    pub fn max(&self) -> f64 {
        self.f_minus_one.max(self.sum_minus_one).max(self.mean_error).max(self.consistency)
    }
}

fn f_of_c<T: Real>(mean: &[T], z: &[T], c: T) -> T {
    let four = T::lit(4.0);
    let half = T::lit(0.5);
    Direction::all(z.len())
        .map(|e| {
            let ze = e.dot(z);
            (ze * ze + four * c * mean[e.index()] * mean[e.opposite().index()]).sqrt()
        })
        .sum::<T>()
        * half
}

/// Unique `C > 0` with `f(C) = 1`, by bisection.
pub fn solve_cz<T: Real>(mean: &SiteKernel<T>, z: &[T]) -> Result<T> {
    let m = mean.as_slice();
    if z.len() != mean.dim() {
        return Err(Error::DimensionMismatch { expected: mean.dim(), got: z.len() });
    }
    let l1: T = z.iter().map(|v| v.abs()).sum();
    if !(l1 < T::one()) {
        return Err(Error::ZNotInterior(l1.to_f64_lossy()));
    }
    let mut hi = T::one();
    while f_of_c(m, z, hi) < T::one() {
        hi = hi + hi;
    }
    let mut lo = T::zero();
    for _ in 0..400 {
        let mid = (lo + hi) * T::lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        if f_of_c(m, z, mid) < T::one() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (flo, fhi) = (f_of_c(m, z, lo), f_of_c(m, z, hi));
    Ok(if (flo - T::one()).abs() < (fhi - T::one()).abs() { lo } else { hi })
}

/// Complete tilt: `u_z`, `D_z = sqrt(C_z)` and
/// `<theta_z, e_j> = log(u_z(e_j) / (D_z m(e_j)))`.
pub fn uz_theta<T: Real>(mean: &SiteKernel<T>, z: &[T]) -> Result<QzTilt<T>> {
    let c = solve_cz(mean, z)?;
    let m = mean.as_slice();
    let d = mean.dim();
    let u: Vec<T> = Direction::all(d)
        .map(|e| {
            let ze = e.dot(z);
            (ze + (ze * ze + T::lit(4.0) * c * m[e.index()] * m[e.opposite().index()]).sqrt()) * T::lit(0.5)
        })
        .collect();
    let d_z = c.sqrt();
    let theta_z = (0..d).map(|j| (u[2 * j] / (d_z * m[2 * j])).ln()).collect();
    // the entries sum to f(C) = 1 up to the bisection error
    let sum: T = u.iter().copied().sum();
    let u_z = SiteKernel::new(u.iter().map(|&v| v / sum).collect())?;
    Ok(QzTilt { z: z.to_vec(), mean: m.to_vec(), c_z: c, u_z, d_z, theta_z })
}

impl<T: Real> QzTilt<T> {
    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn residuals(&self) -> TiltResiduals {
        let u = self.u_z.as_slice();
        let f = |v: T| v.to_f64_lossy();
        let mut mean_error = 0.0f64;
        for (j, zj) in self.z.iter().enumerate() {
            mean_error = mean_error.max(f(u[2 * j] - u[2 * j + 1] - *zj).abs());
        }
        let consistency = Direction::all(self.dim())
            .map(|e| f(u[e.index()] - self.d_z * self.mean[e.index()] * e.dot(&self.theta_z).exp()).abs())
            .fold(0.0, f64::max);
        TiltResiduals {
            f_minus_one: f(f_of_c(&self.mean, &self.z, self.c_z) - T::one()).abs(),
            sum_minus_one: f(u.iter().copied().sum::<T>() - T::one()).abs(),
            mean_error,
            consistency,
        }
    }

    /// Copy with `theta_z` shifted by `eps` in every coordinate (sensitivity
    /// control for the identity checks).
    pub fn with_theta_offset(&self, eps: T) -> Self {
        let mut t = self.clone();
        t.theta_z.iter_mut().for_each(|v| *v = *v + eps);
        t
    }

    /// `argmax_e <z, e>`.
    pub fn default_ell(&self) -> Direction {
        Direction::all(self.dim())
            .max_by(|a, b| a.dot(&self.z).partial_cmp(&b.dot(&self.z)).unwrap())
            .unwrap()
    }

    /// `min(1/(2d), min_e u_z(e) / 2)`.
    pub fn default_coupling(&self) -> T {
        (T::one() / T::of_usize(2 * self.dim())).min(self.u_z.min_prob() * T::lit(0.5))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub abs_err: f64,
}

const ENUMERATION_BUDGET: u128 = 10_000_000;

/// Visits every path of `n` steps: increments (as direction indices) and
/// per-site exit counts.
fn for_each_path(d: usize, n: usize, mut f: impl FnMut(&[usize], &[(Vec<i64>, Vec<u32>)], &[i64])) {
    let total = (2 * d).pow(n as u32);
    let mut steps = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        for s in steps.iter_mut() {
            *s = c % (2 * d);
            c /= 2 * d;
        }
        let mut x = vec![0i64; d];
        let mut sites: Vec<(Vec<i64>, Vec<u32>)> = Vec::new();
        for &s in &steps {
            match sites.iter_mut().find(|(y, _)| *y == x) {
                Some((_, cnt)) => cnt[s] += 1,
                None => {
                    let mut cnt = vec![0u32; 2 * d];
                    cnt[s] = 1;
                    sites.push((x.clone(), cnt));
                }
            }
            Direction::from_index(s).step(&mut x);
        }
        f(&steps, &sites, &x);
    }
}

fn dot_i(theta: &[f64], x: &[i64]) -> f64 {
    theta.iter().zip(x).map(|(t, &v)| t * v as f64).sum()
}

fn to_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

/// Exact annealed identity
/// `E^{Q^z}[e^{<theta,Z_n>} E prod xi] = D_z^n E_0[e^{<theta+theta_z, X_n>}]`
/// by exhaustive enumeration. The left side factors the environment
/// expectation over sites; the right side enumerates joint environment
/// configurations on the visited sites.
pub fn qz_identity_check<T: Real>(law: &EnvLaw<T>, tilt: &QzTilt<T>, theta: &[T], n: usize) -> Result<IdentityCheck> {
    let d = law.dim();
    if theta.len() != d || tilt.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: theta.len() });
    }
    let support: Vec<(f64, Vec<f64>)> = law
        .site_kernel_support()
        .ok_or_else(|| Error::UnsupportedLaw("the exact identity needs an iid law with finite support".into()))?
        .into_iter()
        .map(|(w, k)| (w.to_f64_lossy(), to_f64(&k)))
        .collect();
    let terms = ((2 * d) as u128).pow(n as u32) * (support.len() as u128).pow(n as u32);
    if terms > ENUMERATION_BUDGET {
        return Err(Error::EnumerationTooLarge(terms));
    }
    let u = to_f64(tilt.u_z.as_slice());
    let m = to_f64(&tilt.mean);
    let th = to_f64(theta);
    let th_sum: Vec<f64> = th.iter().zip(&tilt.theta_z).map(|(a, b)| a + b.to_f64_lossy()).collect();
    let dn = tilt.d_z.to_f64_lossy().powi(n as i32);
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for_each_path(d, n, |steps, sites, end| {
        // left: prod u * e^{<theta,Z_n>} * prod_x E[prod_e omega^{n_xe}] / prod m
        let moment: f64 = sites
            .iter()
            .map(|(_, cnt)| support.iter().map(|(w, k)| w * k.iter().zip(cnt).map(|(p, &c)| p.powi(c as i32)).product::<f64>()).sum::<f64>())
            .product();
        let pu: f64 = steps.iter().map(|&s| u[s]).product();
        let pm: f64 = steps.iter().map(|&s| m[s]).product();
        lhs += pu * dot_i(&th, end).exp() * moment / pm;
        // right: joint enumeration of atoms at the visited sites
        let ns = sites.len();
        let mut joint = 0.0;
        for code in 0..support.len().pow(ns as u32) {
            let mut c = code;
            let mut w = 1.0;
            for (_, cnt) in sites {
                let (wa, k) = &support[c % support.len()];
                c /= support.len();
                w *= wa * k.iter().zip(cnt).map(|(p, &e)| p.powi(e as i32)).product::<f64>();
            }
            joint += w;
        }
        rhs += dot_i(&th_sum, end).exp() * joint;
    });
    rhs *= dn;
    Ok(IdentityCheck { lhs, rhs, abs_err: (lhs - rhs).abs() })
}

/// Quenched identity on a fixed environment:
/// `E^{Q^z}[e^{<theta,Z_n>} prod xi] = D_z^n E_{0,omega}[e^{<theta+theta_z, X_n>}]`.
pub fn qz_identity_check_quenched<T: Real, F: KernelField<T> + ?Sized>(
    field: &F,
    tilt: &QzTilt<T>,
    theta: &[T],
    n: usize,
) -> Result<IdentityCheck> {
    let d = field.dim();
    let terms = ((2 * d) as u128).pow(n as u32);
    if terms > ENUMERATION_BUDGET {
        return Err(Error::EnumerationTooLarge(terms));
    }
    let u = to_f64(tilt.u_z.as_slice());
    let m = to_f64(&tilt.mean);
    let th = to_f64(theta);
    let th_sum: Vec<f64> = th.iter().zip(&tilt.theta_z).map(|(a, b)| a + b.to_f64_lossy()).collect();
    let dn = tilt.d_z.to_f64_lossy().powi(n as i32);
    let mut k = vec![T::zero(); 2 * d];
    let (mut lhs, mut rhs) = (0.0, 0.0);
    let mut err = None;
    for_each_path(d, n, |steps, _, end| {
        let mut x = vec![0i64; d];
        let mut pw = 1.0;
        for &s in steps {
            if let Err(e) = field.kernel_into(&x, &mut k) {
                err = Some(e);
                return;
            }
            pw *= k[s].to_f64_lossy();
            Direction::from_index(s).step(&mut x);
        }
        let pu: f64 = steps.iter().map(|&s| u[s]).product();
        let pm: f64 = steps.iter().map(|&s| m[s]).product();
        lhs += pu * dot_i(&th, end).exp() * pw / pm;
        rhs += dot_i(&th_sum, end).exp() * pw;
    });
    if let Some(e) = err {
        return Err(e);
    }
    rhs *= dn;
    Ok(IdentityCheck { lhs, rhs, abs_err: (lhs - rhs).abs() })
}

/// One stage of the renewal scaffolding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaffold {
    /// `S_k`.
    pub s: usize,
    /// `beta_k`; `None` when the walk stays in the cone up to the horizon.
    pub beta: Option<usize>,
    /// `R_k`.
    pub r: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QzRun {
    pub trajectory: Trajectory,
    pub ell: Direction,
    pub coupling: f64,
    pub scaffolds: Vec<Scaffold>,
    /// `tau_k = S_{W_k}` over stages with no cone exit before the horizon.
    pub renewals: RenewalRecord,
    /// No cone exit from the start before the horizon.
    pub beta0_infinite: bool,
    pub horizon: usize,
}

/// Simulates `n` steps of the coupled `Q^z` walk and extracts the stopping
/// scaffolding `S_k, beta_k, R_k` and renewal times. The search for
/// `S_{k+1}` only considers runs starting at or after `S_k`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_qz<T: Real, R: Rng + ?Sized>(
    tilt: &QzTilt<T>,
    kappa_couple: Option<T>,
    n: usize,
    ell: Option<Direction>,
    run_length: usize,
    zeta: f64,
    rng: &mut R,
) -> Result<QzRun> {
    let d = tilt.dim();
    let k = kappa_couple.unwrap_or_else(|| tilt.default_coupling());
    let kf = k.to_f64_lossy();
    let bound = (1.0 / d as f64).min(tilt.u_z.min_prob().to_f64_lossy());
    if !(kf > 0.0) {
        return Err(Error::InvalidCoupling(kf));
    }
    if 2.0 * kf > bound + 1e-15 {
        return Err(Error::ResidualNegative { coupling: kf, min_prob: tilt.u_z.min_prob().to_f64_lossy() });
    }
    if run_length == 0 {
        return Err(Error::InvalidArgument("L must be at least 1".into()));
    }
    let ell = ell.unwrap_or_else(|| tilt.default_ell());
    let residual = super::residual_kernel(tilt.u_z.as_slice(), k)?;
    let mut x = vec![0i64; d];
    let mut incs = Vec::with_capacity(n);
    let mut tags = Vec::with_capacity(n);
    let mut pos = vec![x.clone()];
    for _ in 0..n {
        let tag = draw_tag(d, kf, rng);
        let e = match tag {
            EpsTag::Forced(e) => e,
            EpsTag::Zero => sample_direction(&residual, rng.gen()),
        };
        e.step(&mut x);
        pos.push(x.clone());
        incs.push(e);
        tags.push(tag);
    }
    let proj: Vec<i64> = pos.iter().map(|p| p[ell.axis()] * ell.sign()).collect();
    let mut prefix_max = proj.clone();
    for i in 1..prefix_max.len() {
        prefix_max[i] = prefix_max[i].max(prefix_max[i - 1]);
    }
    let exit_after = |a: usize| (a + 1..=n).find(|&m| !in_cone(&pos[a], &pos[m], zeta, ell));
    // run[m]: consecutive ell-tags ending at step m - 1
    let sym = EpsTag::Forced(ell);
    let mut run = vec![0usize; n + 1];
    for m in 1..=n {
        run[m] = if tags[m - 1] == sym { run[m - 1] + 1 } else { 0 };
    }
    let beta0 = exit_after(0);
    let mut scaffolds = vec![Scaffold { s: 0, beta: beta0, r: proj[0] }];
    let mut r_k = proj[0];
    let mut s_k = 0usize;
    loop {
        let start = (s_k + run_length).max(run_length);
        let Some(s_next) = (start..=n).find(|&m| run[m] >= run_length && proj[m - run_length] > r_k) else {
            break;
        };
        let beta = exit_after(s_next);
        r_k = match beta {
            Some(b) if b >= run_length => prefix_max[b - run_length],
            Some(_) => proj[0],
            None => proj[s_next],
        };
        scaffolds.push(Scaffold { s: s_next, beta, r: r_k });
        s_k = s_next;
    }
    let taus: Vec<usize> = scaffolds.iter().skip(1).filter(|s| s.beta.is_none()).map(|s| s.s).collect();
    let mut traj = Trajectory::new(vec![0; d], incs);
    traj.eps_tags = Some(tags);
    let renewals = RenewalRecord { taus, run_length, blocks: Vec::new() }.with_blocks(&traj);
    Ok(QzRun { trajectory: traj, ell, coupling: kf, scaffolds, renewals, beta0_infinite: beta0.is_none(), horizon: n })
}

/// Run detection on the tags of a `Q^z` run (no scaffolding).
pub fn qz_tag_renewals(run: &QzRun) -> Result<RenewalRecord> {
    detect_tau(run.trajectory.eps_tags.as_deref().unwrap_or(&[]), run.renewals.run_length, EpsTag::Forced(run.ell))
}

/// `P(hit +k before -k)` for the `+-1` walk with `2q = -a + sqrt(a^2 + 1)`,
/// `p = 1 - q`, in the stable form `1 / (1 + (q/p)^k)`.
pub fn gamblers_ruin_probability(a: f64, k: u32) -> f64 {
    let q = 0.5 * (-a + (a * a + 1.0).sqrt());
    let p = 1.0 - q;
    1.0 / (1.0 + (q / p).powi(k as i32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamblerRow {
    pub z_dot_ell: f64,
    pub k: u32,
    pub formula: f64,
    pub mc: f64,
    /// `sqrt(f (1 - f) / replicas)` under the closed form `f`.
    pub sigma: f64,
    pub pass: bool,
}

const GAMBLER_CHUNK: usize = 1000;

/// Exit-side frequencies of the `+-1` walk against the closed form, at 4 sigma.
pub fn gamblers_ruin_check(z_dot_ell: f64, k_values: &[u32], replicas: usize, seed: u64) -> Result<Vec<GamblerRow>> {
    if replicas == 0 {
        return Err(Error::EmptyRun);
    }
    let q = 0.5 * (-z_dot_ell + (z_dot_ell * z_dot_ell + 1.0).sqrt());
    let p = 1.0 - q;
    let mut rows = Vec::new();
    for (ki, &k) in k_values.iter().enumerate() {
        let stream = derive_seed(seed, ((z_dot_ell.to_bits() >> 20) ^ (ki as u64) << 40) ^ k as u64);
        let chunks = replicas.div_ceil(GAMBLER_CHUNK);
        let hits: Vec<usize> = par::replicas(chunks, |c| {
            let mut rng = replica_rng(stream, c as u64);
            let m = GAMBLER_CHUNK.min(replicas - c * GAMBLER_CHUNK);
            (0..m)
                .filter(|_| {
                    let mut y = 0i64;
                    while y.abs() < k as i64 {
                        y += if rng.gen::<f64>() < p { 1 } else { -1 };
                    }
                    y > 0
                })
                .count()
        });
        let mc = hits.iter().sum::<usize>() as f64 / replicas as f64;
        let formula = gamblers_ruin_probability(z_dot_ell, k);
        let sigma = (formula * (1.0 - formula) / replicas as f64).sqrt();
        rows.push(GamblerRow { z_dot_ell, k, formula, mc, sigma, pass: (mc - formula).abs() <= 4.0 * sigma });
    }
    Ok(rows)
}

/// Tilted-walk log-MGF estimates with a finite-difference Hessian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QzMgf {
    pub thetas: Vec<Vec<f64>>,
    pub estimates: Vec<f64>,
    pub cis: Vec<f64>,
    pub theta0: Vec<f64>,
    pub hessian: Vec<Vec<f64>>,
    pub min_eigenvalue: f64,
}

/// `(1/n) log E^{Q^z}[e^{<theta, Z_n>} E prod xi]` by sampling `Q^z` paths.
/// For iid finite-support laws the environment expectation is exact per
/// path; otherwise one environment is drawn per path. All thetas (and the
/// Hessian stencil of step `h` at `theta0`) reuse the same paths.
#[allow(clippy::too_many_arguments)]
pub fn qz_mgf_and_hessian<T: Real>(
    law: &EnvLaw<T>,
    tilt: &QzTilt<T>,
    thetas: &[Vec<T>],
    theta0: &[T],
    n: usize,
    replicas: usize,
    seed: u64,
    h: f64,
) -> Result<QzMgf> {
    if replicas == 0 {
        return Err(Error::EmptyRun);
    }
    let d = law.dim();
    let support: Option<Vec<(f64, Vec<f64>)>> = law
        .site_kernel_support()
        .map(|s| s.into_iter().map(|(w, k)| (w.to_f64_lossy(), to_f64(&k))).collect());
    let u = to_f64(tilt.u_z.as_slice());
    let m = to_f64(&tilt.mean);
    let env_seed = derive_seed(seed, 0x5a);
    let paths: Vec<(Vec<i64>, f64)> = par::try_replicas(replicas, |r| {
        let mut rng = replica_rng(seed, r as u64);
        let mut x = vec![0i64; d];
        let mut sites: Vec<(Vec<i64>, Vec<u32>)> = Vec::new();
        for _ in 0..n {
            let e = sample_direction(&u, rng.gen());
            match sites.iter_mut().find(|(y, _)| *y == x) {
                Some((_, c)) => c[e.index()] += 1,
                None => {
                    let mut c = vec![0u32; 2 * d];
                    c[e.index()] = 1;
                    sites.push((x.clone(), c));
                }
            }
            e.step(&mut x);
        }
        let log_mean_prod: f64 = sites.iter().flat_map(|(_, c)| c.iter().enumerate().map(|(i, &k)| k as f64 * m[i].ln())).sum();
        let log_env = match &support {
            Some(sup) => sites
                .iter()
                .map(|(_, c)| {
                    sup.iter().map(|(w, k)| w * k.iter().zip(c).map(|(p, &e)| p.powi(e as i32)).product::<f64>()).sum::<f64>().ln()
                })
                .sum::<f64>(),
            None => {
                let field = LawField::new(law, derive_seed(env_seed, r as u64));
                let mut kern = vec![T::zero(); 2 * d];
                let mut acc = 0.0;
                for (y, c) in &sites {
                    field.kernel_into(y, &mut kern)?;
                    acc += c.iter().enumerate().map(|(i, &k)| k as f64 * kern[i].to_f64_lossy().ln()).sum::<f64>();
                }
                acc
            }
        };
        Ok::<_, Error>((x, log_env - log_mean_prod))
    })?;
    let samples = |th: &[f64]| -> Vec<f64> { paths.iter().map(|(x, lw)| dot_i(th, x) + lw).collect() };
    let estimate = |th: &[f64]| -> (f64, f64) {
        let l = samples(th);
        let shift = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: Vec<f64> = l.iter().map(|v| (v - shift).exp()).collect();
        let ms = mean_stderr(&z);
        ((shift + ms.mean.ln()) / n as f64, ms.stderr / ms.mean / n as f64)
    };
    let mut estimates = Vec::new();
    let mut cis = Vec::new();
    let thf: Vec<Vec<f64>> = thetas.iter().map(|t| to_f64(t)).collect();
    for th in &thf {
        let (e, c) = estimate(th);
        estimates.push(e);
        cis.push(c);
    }
    let t0 = to_f64(theta0);
    let lam = |di: &[(usize, f64)]| {
        let mut t = t0.clone();
        for &(i, v) in di {
            t[i] += v;
        }
        estimate(&t).0
    };
    let mut hess = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let v = (lam(&[(i, h), (j, h)]) - lam(&[(i, h), (j, -h)]) - lam(&[(i, -h), (j, h)]) + lam(&[(i, -h), (j, -h)]))
                / (4.0 * h * h);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    let mat = DMatrix::from_fn(d, d, |i, j| hess[i][j]);
    let min_eigenvalue = SymmetricEigen::new(mat).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(QzMgf { thetas: thf, estimates, cis, theta0: t0, hessian: hess, min_eigenvalue })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TildeRow {
    pub x: Vec<f64>,
    /// `I~(x) + log D_z + <theta_z, x>`.
    pub lhs: f64,
    /// `I_a(x)`.
    pub rhs: f64,
    pub diff: f64,
    /// An argmax hit a grid edge on either side; not compared.
    pub flagged: bool,
}

/// Compares the conjugate of the tilted log-MGF (values `bar` on
/// `bar_thetas`) with the conjugate of the unrestricted annealed log-MGF
/// (values `full` on `full_thetas`) at each `x`.
pub fn tilde_rate_identity<T: Real>(
    tilt: &QzTilt<T>,
    bar_thetas: &[Vec<T>],
    bar: &[T],
    full_thetas: &[Vec<T>],
    full: &[T],
    xs: &[Vec<T>],
) -> Result<Vec<TildeRow>> {
    let tilde = legendre(bar_thetas, bar, xs)?;
    let ia = legendre(full_thetas, full, xs)?;
    let log_d = tilt.d_z.ln().to_f64_lossy();
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let xf = to_f64(x);
            let shift: f64 = xf.iter().zip(&tilt.theta_z).map(|(a, b)| a * b.to_f64_lossy()).sum();
            let lhs = tilde.star_vals[i].to_f64_lossy() + log_d + shift;
            let rhs = ia.star_vals[i].to_f64_lossy();
            TildeRow { x: xf, lhs, rhs, diff: (lhs - rhs).abs(), flagged: tilde.edge_flags[i] || ia.edge_flags[i] }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_iid_law, MarginalFamily};

    fn half() -> SiteKernel<f64> {
        SiteKernel::uniform(1)
    }

    #[test]
    fn cz_examples() {
        assert!((solve_cz(&half(), &[0.0]).unwrap() - 1.0).abs() < 1e-12);
        let t = uz_theta(&half(), &[0.5]).unwrap();
        assert!((t.c_z - 0.75).abs() < 1e-12);
        assert!((t.u_z.as_slice()[0] - 0.75).abs() < 1e-12);
        assert!((t.theta_z[0] - 3f64.sqrt().ln()).abs() < 1e-12);
        assert!((t.theta_z[0] - 0.549306).abs() < 1e-6);
        let z0 = uz_theta(&half(), &[0.0]).unwrap();
        assert!((z0.d_z - 1.0).abs() < 1e-12 && z0.theta_z[0].abs() < 1e-12);
        assert!(matches!(solve_cz(&half(), &[1.0]), Err(Error::ZNotInterior(_))));
        assert!(t.residuals().max() < 1e-12);
    }

    #[test]
    fn identity_small_cases() {
        let law = make_iid_law::<f64>(1, 0.2, half(), MarginalFamily::two_point(), 0.2).unwrap();
        let mean = SiteKernel::new(law.effective_mean()).unwrap();
        let tilt = uz_theta(&mean, &[0.5]).unwrap();
        let one = qz_identity_check(&law, &tilt, &[0.0], 1).unwrap();
        assert!((one.lhs - 1.0).abs() < 1e-12 && (one.rhs - 1.0).abs() < 1e-12);
        let four = qz_identity_check(&law, &tilt, &[0.3], 4).unwrap();
        assert!(four.abs_err <= 1e-10, "{four:?}");
        let bad = qz_identity_check(&law, &tilt.with_theta_offset(1e-3), &[0.3], 4).unwrap();
        assert!(bad.abs_err > 1e-10);
        assert!(matches!(qz_identity_check(&law, &tilt, &[0.0], 30), Err(Error::EnumerationTooLarge(_))));
    }

    #[test]
    fn quenched_identity() {
        let law = make_iid_law::<f64>(2, 0.1, SiteKernel::uniform(2), MarginalFamily::uniform_interval(), 0.2).unwrap();
        let mean = SiteKernel::new(law.effective_mean()).unwrap();
        let tilt = uz_theta(&mean, &[0.2, 0.1]).unwrap();
        let c = qz_identity_check_quenched(&LawField::new(&law, 4), &tilt, &[0.3, -0.3], 4).unwrap();
        assert!(c.abs_err <= 1e-10);
        assert!(matches!(qz_identity_check(&law, &tilt, &[0.0, 0.0], 2), Err(Error::UnsupportedLaw(_))));
    }

    #[test]
    fn simulated_mean_increment_is_z() {
        let tilt = uz_theta(&SiteKernel::new(vec![0.3, 0.2, 0.3, 0.2]).unwrap(), &[0.3, -0.1]).unwrap();
        let mut rng = replica_rng(8, 0);
        let n = 100_000;
        let run = simulate_qz(&tilt, None, n, None, 3, 0.1, &mut rng).unwrap();
        let end = run.trajectory.endpoint();
        for j in 0..2 {
            let u = tilt.u_z.as_slice();
            let var = u[2 * j] + u[2 * j + 1] - tilt.z[j] * tilt.z[j];
            let se = (var / n as f64).sqrt();
            assert!((end[j] as f64 / n as f64 - tilt.z[j]).abs() <= 4.0 * se);
        }
    }

    #[test]
    fn renewal_spacing_and_displacement() {
        let tilt = uz_theta(&SiteKernel::uniform(2), &[0.4, 0.1]).unwrap();
        let mut rng = replica_rng(2, 0);
        let run = simulate_qz(&tilt, None, 20_000, None, 2, 0.1, &mut rng).unwrap();
        assert_eq!(run.ell, Direction::new(0, 1));
        let taus = &run.renewals.taus;
        assert!(!taus.is_empty());
        for w in taus.windows(2) {
            assert!(w[1] - w[0] >= 2);
        }
        for b in run.renewals.blocks.iter().skip(1) {
            assert!(b.displacement[0] >= 2);
        }
        for w in run.scaffolds.windows(2) {
            assert!(w[1].s >= w[0].s + 2);
        }
        let tags = qz_tag_renewals(&run).unwrap();
        assert!(tags.taus.windows(2).all(|w| w[1] >= w[0] + 2));
    }

    #[test]
    fn coupling_bounds() {
        let tilt = uz_theta(&half(), &[0.5]).unwrap();
        let mut rng = replica_rng(0, 0);
        assert!(simulate_qz(&tilt, Some(0.2), 10, None, 1, 0.1, &mut rng).is_err());
        assert!(simulate_qz(&tilt, Some(0.0), 10, None, 1, 0.1, &mut rng).is_err());
        let m = super::super::coupled_marginal(tilt.u_z.as_slice(), tilt.default_coupling()).unwrap();
        for (a, b) in m.iter().zip(tilt.u_z.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gambler_formula() {
        for k in 1..=8 {
            assert!((gamblers_ruin_probability(0.0, k) - 0.5).abs() < 1e-15);
        }
        assert!((gamblers_ruin_probability(0.5, 3) - 0.917900).abs() < 1e-6);
        let mut prev = 0.0;
        for k in 1..=20 {
            let p = gamblers_ruin_probability(0.5, k);
            assert!(p > prev);
            prev = p;
        }
        let rows = gamblers_ruin_check(0.25, &[1, 4], 20_000, 3).unwrap();
        assert!(rows.iter().all(|r| r.pass), "{rows:?}");
    }

    #[test]
    fn mgf_zero_disorder_closed_form() {
        let law = make_iid_law::<f64>(1, 0.1, half(), MarginalFamily::two_point(), 0.0).unwrap();
        let tilt = uz_theta(&SiteKernel::new(law.effective_mean()).unwrap(), &[0.5]).unwrap();
        let thetas = vec![vec![-0.3], vec![0.0], vec![0.3]];
        let r = qz_mgf_and_hessian(&law, &tilt, &thetas, &[0.0], 20, 20_000, 1, 0.05).unwrap();
        let u = tilt.u_z.as_slice();
        for (i, th) in thetas.iter().enumerate() {
            let exact = (u[0] * th[0].exp() + u[1] * (-th[0]).exp()).ln();
            assert!((r.estimates[i] - exact).abs() <= 4.0 * r.cis[i] + 1e-12);
        }
        let var = 1.0 - 0.25;
        assert!((r.hessian[0][0] - var).abs() < 0.1);
        assert!(r.min_eigenvalue > 0.0);
    }

    #[test]
    fn tilde_identity_closed_forms() {
        let tilt = uz_theta(&half(), &[0.5]).unwrap();
        let grid = crate::mgf::product_grid::<f64>(1, -3.0, 3.0, 6001);
        let u = tilt.u_z.as_slice().to_vec();
        let bar: Vec<f64> = grid.iter().map(|t| (u[0] * t[0].exp() + u[1] * (-t[0]).exp()).ln()).collect();
        let full: Vec<f64> = grid.iter().map(|t| t[0].cosh().ln()).collect();
        let rows = tilde_rate_identity(&tilt, &grid, &bar, &grid, &full, &[vec![0.5], vec![0.3]]).unwrap();
        // SRW rate at x = 0.5
        let ia = 0.5 * (1.5 * 1.5f64.ln() + 0.5 * 0.5f64.ln());
        assert!((rows[0].rhs - ia).abs() < 1e-6, "{:?}", rows[0]);
        for r in &rows {
            assert!(!r.flagged);
            assert!(r.diff <= 1e-3, "{r:?}");
        }
    }
}
