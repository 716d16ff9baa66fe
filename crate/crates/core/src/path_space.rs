//! Finite paths ending at the origin, their edge hitting counts, and the
//! annealed one-step kernel conditioned on a path,
//! `q(w, z) = E[prod omega^{n(w)} * omega(0, z)] / E[prod omega^{n(w)}]`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::lattice::{Direction, EnvLaw, KernelField, LawField, Window};
use crate::rng::derive_seed;
use crate::stats::ratio_estimate;
use crate::{par, Error, Real, Result};

/// Increments `(z_{-N+1}, ..., z_0)` of a path whose last position is `0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FinitePath {
    pub d: usize,
    pub increments: Vec<Direction>,
}

impl FinitePath {
    pub fn new(d: usize, increments: Vec<Direction>) -> Self {
        FinitePath { d, increments }
    }

    pub fn empty(d: usize) -> Self {
        FinitePath { d, increments: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    /// Positions `x_{-N}, ..., x_0 = 0` in time order.
    pub fn positions(&self) -> Vec<Vec<i64>> {
        let mut x = vec![0; self.d];
        let mut out = vec![x.clone()];
        for e in self.increments.iter().rev() {
            e.unstep(&mut x);
            out.push(x.clone());
        }
        out.reverse();
        out
    }

    /// The last `k` increments.
    pub fn suffix(&self, k: usize) -> FinitePath {
        FinitePath { d: self.d, increments: self.increments[self.len() - k..].to_vec() }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let cols: Vec<String> = (1..=self.d).map(|i| format!("dz_{i}")).collect();
        writeln!(w, "{}", cols.join(","))?;
        for e in &self.increments {
            let v: Vec<String> = e.to_vector(self.d).iter().map(|c| c.to_string()).collect();
            writeln!(w, "{}", v.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty path file".into()))??;
        let d = header.split(',').count();
        let mut increments = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v = line
                .split(',')
                .map(|c| c.trim().parse::<i64>().map_err(|_| Error::Parse(format!("path row `{line}`"))))
                .collect::<Result<Vec<_>>>()?;
            let nz: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0).collect();
            if v.len() != d || nz.len() != 1 || v[nz[0]].abs() != 1 {
                return Err(Error::Parse(format!("`{line}` is not a unit step")));
            }
            increments.push(Direction::new(nz[0], v[nz[0]].signum() as i8));
        }
        Ok(FinitePath { d, increments })
    }
}

/// `n_{x,z}(w)`: how often the path leaves `x` through `z`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HittingCounts {
    pub counts: BTreeMap<(Vec<i64>, Direction), u32>,
}

impl HittingCounts {
    pub fn get(&self, x: &[i64], z: Direction) -> u32 {
        self.counts.get(&(x.to_vec(), z)).copied().unwrap_or(0)
    }

    /// `n_x(w)`.
    pub fn visits(&self, x: &[i64]) -> u32 {
        self.counts.iter().filter(|((y, _), _)| y == x).map(|(_, &c)| c).sum()
    }

    pub fn total(&self) -> u32 {
        self.counts.values().sum()
    }

    /// Counts grouped by site, each as a per-direction vector.
    pub fn by_site(&self, d: usize) -> BTreeMap<Vec<i64>, Vec<u32>> {
        let mut out: BTreeMap<Vec<i64>, Vec<u32>> = BTreeMap::new();
        for ((x, z), &c) in &self.counts {
            out.entry(x.clone()).or_insert_with(|| vec![0; 2 * d])[z.index()] += c;
        }
        out
    }
}

pub fn hitting_counts(path: &FinitePath) -> HittingCounts {
    let pos = path.positions();
    let mut counts = BTreeMap::new();
    for (x, &z) in pos.iter().zip(&path.increments) {
        *counts.entry((x.clone(), z)).or_insert(0) += 1;
    }
    HittingCounts { counts }
}

/// `log E[prod_e omega(e)^{n_e}]` for one site, enumerating the support.
fn log_site_moment<T: Real>(support: &[(T, Vec<T>)], n: &[u32]) -> T {
    let terms: Vec<T> = support
        .iter()
        .map(|(w, k)| w.ln() + k.iter().zip(n).map(|(&p, &c)| T::of_usize(c as usize) * p.ln()).sum::<T>())
        .collect();
    crate::scalar::log_sum_exp(&terms)
}

/// Exact `q(w, z)` for iid laws with finite-support marginals. Both
/// expectations factor over sites; each factor is enumerated over the support.
pub fn kernel_q_exact<T: Real>(law: &EnvLaw<T>, path: &FinitePath, z: Direction) -> Result<T> {
    let support = law
        .site_kernel_support()
        .ok_or_else(|| Error::UnsupportedLaw("exact q needs an iid law with finite support; use kernel_q_mc".into()))?;
    let d = law.dim();
    let origin = vec![0; d];
    let mut sites = hitting_counts(path).by_site(d);
    sites.entry(origin.clone()).or_insert_with(|| vec![0; 2 * d]);
    let mut log_num = T::zero();
    let mut log_den = T::zero();
    for (x, n) in &sites {
        let f = log_site_moment(&support, n);
        log_den = log_den + f;
        if *x == origin {
            let mut n1 = n.clone();
            n1[z.index()] += 1;
            log_num = log_num + log_site_moment(&support, &n1);
        } else {
            log_num = log_num + f;
        }
    }
    Ok((log_num - log_den).exp())
}

/// `q` of every suffix of `path`, shortest first: a stabilization diagnostic
/// for long (transient) paths.
pub fn q_along_suffixes<T: Real>(law: &EnvLaw<T>, path: &FinitePath, z: Direction) -> Result<Vec<T>> {
    (1..=path.len()).map(|k| kernel_q_exact(law, &path.suffix(k), z)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

fn q_mc_with<T: Real, F: KernelField<T>>(
    d: usize,
    path: &FinitePath,
    z: Direction,
    nsamples: usize,
    make_field: impl Fn(usize) -> Result<F> + Sync + Send,
) -> Result<QEstimate> {
    if nsamples < 1000 {
        return Err(Error::InvalidArgument(format!("nsamples = {nsamples} < 1000")));
    }
    let sites = hitting_counts(path).by_site(d);
    let origin = vec![0i64; d];
    let draws: Vec<(f64, f64)> = par::try_replicas(nsamples, |i| {
        let field = make_field(i)?;
        let mut k = vec![T::zero(); 2 * d];
        let mut log_b = 0.0;
        for (x, n) in &sites {
            field.kernel_into(x, &mut k)?;
            log_b += k.iter().zip(n).map(|(p, &c)| c as f64 * p.to_f64_lossy().ln()).sum::<f64>();
        }
        field.kernel_into(&origin, &mut k)?;
        Ok::<_, Error>((log_b, k[z.index()].to_f64_lossy()))
    })?;
    let shift = draws.iter().map(|d| d.0).fold(f64::NEG_INFINITY, f64::max);
    let den: Vec<f64> = draws.iter().map(|(lb, _)| (lb - shift).exp()).collect();
    let num: Vec<f64> = draws.iter().zip(&den).map(|((_, w), b)| b * w).collect();
    let (estimate, stderr) = ratio_estimate(&num, &den)?;
    Ok(QEstimate { estimate, stderr })
}

/// Monte Carlo `q(w, z)` for any law: ratio of environment averages with a
/// delta-method standard error.
pub fn kernel_q_mc<T: Real>(law: &EnvLaw<T>, path: &FinitePath, z: Direction, nsamples: usize, seed: u64) -> Result<QEstimate> {
    q_mc_with(law.dim(), path, z, nsamples, |i| Ok(LawField::new(law, derive_seed(seed, i as u64))))
}

/// As [`kernel_q_mc`] with environments materialized on `window`
/// (mean kernel outside).
pub fn kernel_q_mc_windowed<T: Real>(
    law: &EnvLaw<T>,
    window: &Window,
    path: &FinitePath,
    z: Direction,
    nsamples: usize,
    seed: u64,
) -> Result<QEstimate> {
    q_mc_with(law.dim(), path, z, nsamples, |i| {
        crate::lattice::sample_environment(law, window, derive_seed(seed, i as u64))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_iid_law, MarginalFamily, SiteKernel};

    fn p(i: i8) -> Direction {
        Direction::new(0, i)
    }

    fn two_point() -> EnvLaw<f64> {
        make_iid_law::<f64>(1, 0.2, SiteKernel::uniform(1), MarginalFamily::two_point(), 0.2).unwrap()
    }

    #[test]
    fn counts_hand_traces() {
        assert_eq!(hitting_counts(&FinitePath::empty(1)).total(), 0);
        let c = hitting_counts(&FinitePath::new(1, vec![p(1), p(1)]));
        assert_eq!(c.counts.len(), 2);
        assert_eq!(c.get(&[-2], p(1)), 1);
        assert_eq!(c.get(&[-1], p(1)), 1);
        let c = hitting_counts(&FinitePath::new(1, vec![p(1), p(-1), p(1)]));
        // positions -1, 0, -1, 0
        assert_eq!(c.total(), 3);
        assert_eq!(c.visits(&[-1]), 2);
        assert_eq!(c.get(&[-1], p(1)), 2);
        assert_eq!(c.get(&[0], p(-1)), 1);
    }

    #[test]
    fn empty_path_gives_mean() {
        let law = two_point();
        for z in Direction::all(1) {
            assert!((kernel_q_exact(&law, &FinitePath::empty(1), z).unwrap() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn one_visit_example() {
        // positions 0 -> 1 -> 0: site 0 left once through +1
        let w = FinitePath::new(1, vec![p(1), p(-1)]);
        assert_eq!(hitting_counts(&w).get(&[0], p(1)), 1);
        let q = kernel_q_exact(&two_point(), &w, p(1)).unwrap();
        assert!((q - 0.52).abs() < 1e-14, "{q}");
        let mc = kernel_q_mc(&two_point(), &w, p(1), 20_000, 3).unwrap();
        assert!((mc.estimate - 0.52).abs() <= 4.0 * mc.stderr, "{mc:?}");
    }

    #[test]
    fn zero_disorder_is_mean_kernel() {
        let mean = SiteKernel::new(vec![0.3, 0.2, 0.35, 0.15]).unwrap();
        let law = make_iid_law::<f64>(2, 0.1, mean.clone(), MarginalFamily::two_point(), 0.0).unwrap();
        let w = FinitePath::new(2, vec![Direction::new(0, 1), Direction::new(1, 1), Direction::new(0, -1), Direction::new(1, -1)]);
        for z in Direction::all(2) {
            assert!((kernel_q_exact(&law, &w, z).unwrap() - mean.prob(z)).abs() < 1e-14);
            let mc = kernel_q_mc(&law, &w, z, 1000, 1).unwrap();
            assert!((mc.estimate - mean.prob(z)).abs() < 1e-14);
            assert!(mc.stderr < 1e-12);
        }
    }

    #[test]
    fn continuous_family_is_unsupported() {
        let law = make_iid_law::<f64>(1, 0.2, SiteKernel::uniform(1), MarginalFamily::uniform_interval(), 0.2).unwrap();
        assert!(matches!(kernel_q_exact(&law, &FinitePath::empty(1), p(1)), Err(Error::UnsupportedLaw(_))));
        assert!(kernel_q_mc(&law, &FinitePath::empty(1), p(1), 10, 0).is_err());
    }

    #[test]
    fn path_csv_round_trip() {
        let w = FinitePath::new(2, vec![Direction::new(0, 1), Direction::new(1, -1)]);
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        assert_eq!(FinitePath::read_csv(&buf[..]).unwrap(), w);
    }
}
