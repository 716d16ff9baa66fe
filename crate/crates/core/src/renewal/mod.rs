//! The forced-step coupling of a nearest-neighbour kernel, run-based
//! renewal times, the tilted-walk martingale, and the homogeneous tilted
//! walk `Q^z`.

mod martingale;
mod qz;

pub use martingale::{h_martingale_sample, HSamples};
pub use qz::{
    gamblers_ruin_check, gamblers_ruin_probability, qz_identity_check, qz_identity_check_quenched, qz_mgf_and_hessian,
    qz_tag_renewals, simulate_qz, solve_cz, tilde_rate_identity, uz_theta, GamblerRow, IdentityCheck, QzMgf, QzRun, QzTilt,
    Scaffold, TildeRow, TiltResiduals,
};

use std::fmt;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lattice::{Direction, KernelField};
use crate::walk::{sample_direction, Trajectory};
use crate::{Error, Real, Result};

/// One coupling variable: a forced step, or `0` (draw from the residual).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EpsTag {
    Zero,
    Forced(Direction),
}

impl fmt::Display for EpsTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpsTag::Zero => f.write_str("0"),
            EpsTag::Forced(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsSequence {
    pub tags: Vec<EpsTag>,
    pub coupling_prob: f64,
}

fn check_coupling(d: usize, k: f64) -> Result<()> {
    if !(k > 0.0) || 2.0 * d as f64 * k > 1.0 + 1e-15 {
        return Err(Error::InvalidCoupling(k));
    }
    Ok(())
}

/// Draws one tag: each `e` with probability `k`, `0` otherwise.
pub fn draw_tag<R: Rng + ?Sized>(d: usize, k: f64, rng: &mut R) -> EpsTag {
    let u: f64 = rng.gen();
    let i = (u / k) as usize;
    if i < 2 * d {
        EpsTag::Forced(Direction::from_index(i))
    } else {
        EpsTag::Zero
    }
}

/// `n` iid coupling tags in dimension `d`.
pub fn sample_eps<R: Rng + ?Sized>(d: usize, n: usize, k: f64, rng: &mut R) -> Result<EpsSequence> {
    check_coupling(d, k)?;
    Ok(EpsSequence { tags: (0..n).map(|_| draw_tag(d, k, rng)).collect(), coupling_prob: k })
}

/// `(omega(e) - k) / (1 - 2dk)`.
pub fn residual_kernel<T: Real>(kernel: &[T], k: T) -> Result<Vec<T>> {
    let min = kernel.iter().copied().fold(T::infinity(), T::min);
    if k > min {
        return Err(Error::ResidualNegative { coupling: k.to_f64_lossy(), min_prob: min.to_f64_lossy() });
    }
    let rest = T::one() - T::of_usize(kernel.len()) * k;
    Ok(kernel.iter().map(|&p| (p - k) / rest).collect())
}

/// `sum_tag Q(tag) P(step = e | tag)`, which must reproduce `kernel`.
pub fn coupled_marginal<T: Real>(kernel: &[T], k: T) -> Result<Vec<T>> {
    let rest = T::one() - T::of_usize(kernel.len()) * k;
    let res = residual_kernel(kernel, k)?;
    Ok(res.iter().map(|&r| k + rest * r).collect())
}

/// One step of the coupled walk from `x`.
pub fn step_aux<T: Real, F: KernelField<T> + ?Sized, R: Rng + ?Sized>(
    field: &F,
    x: &[i64],
    tag: EpsTag,
    k: T,
    rng: &mut R,
) -> Result<Direction> {
    let d = field.dim();
    check_coupling(d, k.to_f64_lossy())?;
    let mut kern = vec![T::zero(); 2 * d];
    field.kernel_into(x, &mut kern)?;
    let res = residual_kernel(&kern, k)?;
    Ok(match tag {
        EpsTag::Forced(e) => e,
        EpsTag::Zero => sample_direction(&res, rng.gen()),
    })
}

/// Walk of `n` coupled steps with its tags.
pub fn simulate_coupled<T: Real, F: KernelField<T> + ?Sized, R: Rng + ?Sized>(
    field: &F,
    x0: &[i64],
    n: usize,
    k: T,
    rng: &mut R,
) -> Result<Trajectory> {
    let d = field.dim();
    check_coupling(d, k.to_f64_lossy())?;
    let mut x = x0.to_vec();
    let mut incs = Vec::with_capacity(n);
    let mut tags = Vec::with_capacity(n);
    for _ in 0..n {
        let tag = draw_tag(d, k.to_f64_lossy(), rng);
        let e = step_aux(field, &x, tag, k, rng)?;
        e.step(&mut x);
        incs.push(e);
        tags.push(tag);
    }
    let mut t = Trajectory::new(x0.to_vec(), incs);
    t.eps_tags = Some(tags);
    Ok(t)
}

/// Per-renewal summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalBlock {
    pub duration: usize,
    pub displacement: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalRecord {
    /// `tau_1 < tau_2 < ...` (`tau_0 = 0` is implicit).
    pub taus: Vec<usize>,
    pub run_length: usize,
    pub blocks: Vec<RenewalBlock>,
}

impl RenewalRecord {
    /// Fills `blocks` from the walk that produced the tags.
    pub fn with_blocks(mut self, traj: &Trajectory) -> Self {
        let mut prev = 0;
        self.blocks = self
            .taus
            .iter()
            .map(|&t| {
                let a = traj.position_at(prev);
                let b = traj.position_at(t);
                let blk = RenewalBlock { duration: t - prev, displacement: b.iter().zip(&a).map(|(p, q)| p - q).collect() };
                prev = t;
                blk
            })
            .collect();
        self
    }

    /// CSV `(k, tau_k, dx_1..dx_d)`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.blocks.first().map_or(0, |b| b.displacement.len());
        let mut cols = vec!["k".to_string(), "tau_k".to_string()];
        cols.extend((1..=d).map(|i| format!("dx_{i}")));
        writeln!(w, "{}", cols.join(","))?;
        for (i, t) in self.taus.iter().enumerate() {
            let disp: Vec<String> = self.blocks.get(i).map_or(Vec::new(), |b| b.displacement.iter().map(|v| v.to_string()).collect());
            let mut row = vec![(i + 1).to_string(), t.to_string()];
            row.extend(disp);
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `tau_n = inf{ j >= tau_{n-1} + L : tags[j-L..j] are all run_symbol }`.
/// Fails with `NoRenewal` when the sequence contains none.
pub fn detect_tau(tags: &[EpsTag], run_length: usize, run_symbol: EpsTag) -> Result<RenewalRecord> {
    if run_length == 0 {
        return Err(Error::InvalidArgument("run length L must be at least 1".into()));
    }
    let mut taus = Vec::new();
    let mut run = 0;
    for (i, &t) in tags.iter().enumerate() {
        run = if t == run_symbol { run + 1 } else { 0 };
        // windows after a renewal must not reuse its tags
        if run == run_length {
            taus.push(i + 1);
            run = 0;
        }
    }
    if taus.is_empty() {
        return Err(Error::NoRenewal(tags.len()));
    }
    Ok(RenewalRecord { taus, run_length, blocks: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_iid_law, LawField, MarginalFamily, SiteKernel};
    use crate::rng::replica_rng;
    use crate::stats::chi_square_gof;

    fn tag(i: i8) -> EpsTag {
        EpsTag::Forced(Direction::new(0, i))
    }

    #[test]
    fn display() {
        assert_eq!(EpsTag::Zero.to_string(), "0");
        assert_eq!(tag(1).to_string(), "+1");
        assert_eq!(EpsTag::Forced(Direction::new(1, -1)).to_string(), "-2");
    }

    #[test]
    fn eps_frequencies() {
        let mut rng = replica_rng(5, 0);
        let full = sample_eps(2, 10_000, 0.25, &mut rng).unwrap();
        assert!(full.tags.iter().all(|t| *t != EpsTag::Zero));
        let n = 100_000;
        let s = sample_eps(1, n, 0.2, &mut rng).unwrap();
        let f = s.tags.iter().filter(|&&t| t == tag(1)).count() as f64 / n as f64;
        assert!((f - 0.2).abs() <= 4.0 * (0.2f64 * 0.8 / n as f64).sqrt());
        let counts = [tag(1), tag(-1), EpsTag::Zero].map(|t| s.tags.iter().filter(|&&x| x == t).count() as u64);
        assert!(chi_square_gof(&counts, &[0.2, 0.2, 0.6]).1 > 0.001);
        assert_eq!(sample_eps(1, 5, 0.0, &mut rng).unwrap_err(), Error::InvalidCoupling(0.0));
        assert!(sample_eps(1, 5, 0.6, &mut rng).is_err());
    }

    #[test]
    fn residual_examples() {
        let r = residual_kernel::<f64>(&[0.5, 0.5], 0.2).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] - 0.5).abs() < 1e-15);
        assert!(matches!(residual_kernel(&[0.1, 0.9], 0.2), Err(Error::ResidualNegative { .. })));
        let k: [f64; 4] = [0.31, 0.22, 0.27, 0.2];
        let m = coupled_marginal(&k, 0.2).unwrap();
        for (a, b) in m.iter().zip(&k) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn forced_tag_is_deterministic() {
        let law = make_iid_law::<f64>(1, 0.2, SiteKernel::uniform(1), MarginalFamily::two_point(), 0.2).unwrap();
        let f = LawField::new(&law, 3);
        let mut rng = replica_rng(1, 1);
        for _ in 0..50 {
            assert_eq!(step_aux(&f, &[4], tag(1), 0.2, &mut rng).unwrap(), Direction::new(0, 1));
        }
    }

    #[test]
    fn tau_examples() {
        let s = tag(1);
        let z = EpsTag::Zero;
        let r = detect_tau(&[s, s, s, z], 2, s).unwrap();
        assert_eq!(r.taus, vec![2]);
        let r = detect_tau(&[s, s, s], 2, s).unwrap();
        assert_eq!(r.taus, vec![2]);
        let r = detect_tau(&[s, s, s, s, z, s], 2, s).unwrap();
        assert_eq!(r.taus, vec![2, 4]);
        let r = detect_tau(&[z, z, s, z, s], 1, s).unwrap();
        assert_eq!(r.taus, vec![3, 5]);
        assert_eq!(detect_tau(&[z, z], 1, s).unwrap_err(), Error::NoRenewal(2));
        assert!(detect_tau(&[s], 0, s).is_err());
    }

    #[test]
    fn renewal_csv() {
        let traj = Trajectory::new(vec![0], vec![Direction::new(0, 1); 4]);
        let r = RenewalRecord { taus: vec![2, 4], run_length: 2, blocks: vec![] }.with_blocks(&traj);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,tau_k,dx_1\n1,2,2\n2,4,2\n");
    }
}
