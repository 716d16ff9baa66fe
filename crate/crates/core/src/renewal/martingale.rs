//! Normalized tilted expectations at renewal times.
//!
//! For a fixed environment the numerator is
//! `E_Q E_{0,omega,eps}[e^{<theta, S(tau_n)>} 1{B(tau_n)}]`: the coupled
//! walk is run with the tags averaged out, so it is a deterministic
//! function of `omega`, computed exactly by a level DP over
//! (site, current run length, renewals so far). The normalizer is its
//! environment average.

use serde::{Deserialize, Serialize};

use crate::lattice::{BoundaryPolicy, EnvLaw, Environment, KernelField, LawField, SignVector, SiteKernel, Window};
use crate::mgf::directed;
use crate::rng::derive_seed;
use crate::stats::mean_stderr;
use crate::walk::pi_dot;
use crate::{par, Error, Real, Result};

const MAX_LEVELS: usize = 5000;
const DENOMINATOR_STREAM: u64 = 0x4e6f726d;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HSamples {
    pub samples: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
    pub denominator: f64,
    /// The normalizer was computed in closed form (iid laws) rather than
    /// by a dedicated Monte Carlo sample.
    pub exact_denominator: bool,
}

/// Exact numerator for one environment. The run symbol is `s_1 e_1`.
pub(crate) fn renewal_tilted_mass<T: Real, F: KernelField<T> + ?Sized>(
    field: &F,
    s: &SignVector,
    theta: &[T],
    run_length: usize,
    renewals: usize,
    k: f64,
) -> Result<f64> {
    let d = field.dim();
    let dm1 = d - 1;
    let (l, nr) = (run_length, renewals);
    let steps = directed::steps(s);
    let sym = s.direction(0);
    let tilt: Vec<f64> = steps.iter().map(|&e| pi_dot(s, e, theta).to_f64_lossy().exp()).collect();
    let slot = |pos: usize, r: usize, c: usize| (pos * l + r) * nr + c;
    let mut cur = vec![0.0f64; l * nr];
    cur[slot(0, 0, 0)] = 1.0;
    let mut acc = 0.0f64;
    let mut cnt = vec![0usize; dm1];
    let mut x = vec![0i64; d];
    let mut kern = vec![T::zero(); 2 * d];
    for j in 0..MAX_LEVELS {
        let mut next = vec![0.0f64; directed::level_len(dm1, j + 1) * l * nr];
        for pos in 0..directed::level_len(dm1, j) {
            let base = slot(pos, 0, 0);
            if !directed::decode(pos, j, dm1, &mut cnt) || cur[base..base + l * nr].iter().all(|&w| w == 0.0) {
                continue;
            }
            directed::site(s, &cnt, j, &mut x);
            field.kernel_into(&x, &mut kern)?;
            for (a, &e) in steps.iter().enumerate() {
                let np = directed::next_index(&mut cnt, a, j);
                let p = kern[e.index()].to_f64_lossy();
                let forced = k * tilt[a];
                let residual = (p - k) * tilt[a];
                for r in 0..l {
                    for c in 0..nr {
                        let w = cur[slot(pos, r, c)];
                        if w == 0.0 {
                            continue;
                        }
                        if e == sym {
                            next[slot(np, 0, c)] += w * residual;
                            if r + 1 < l {
                                next[slot(np, r + 1, c)] += w * forced;
                            } else if c + 1 < nr {
                                next[slot(np, 0, c + 1)] += w * forced;
                            } else {
                                acc += w * forced;
                            }
                        } else {
                            next[slot(np, 0, c)] += w * (forced + residual);
                        }
                    }
                }
            }
        }
        cur = next;
        let live: f64 = cur.iter().sum();
        if live == 0.0 || (acc > 0.0 && live <= 1e-16 * acc) {
            return Ok(acc);
        }
        if !live.is_finite() {
            break;
        }
    }
    Err(Error::InvalidArgument(format!(
        "tilted mass at theta = {theta:?} does not decay within {MAX_LEVELS} steps"
    )))
}

/// Samples `H_{n,theta}` over `replicas` environments of `law`. The
/// coupling probability defaults to the ellipticity constant. For iid laws
/// the normalizer is the same DP on the mean environment (directed walks
/// never revisit a site); otherwise it is the average over a dedicated
/// sample of `max(replicas, 10^4)` environments shared by all replicas.
#[allow(clippy::too_many_arguments)]
pub fn h_martingale_sample<T: Real>(
    law: &EnvLaw<T>,
    s: &SignVector,
    theta: &[T],
    run_length: usize,
    renewals: usize,
    replicas: usize,
    seed: u64,
    kappa_couple: Option<T>,
) -> Result<HSamples> {
    let d = law.dim();
    if s.dim() != d || theta.len() + 1 != d {
        return Err(Error::DimensionMismatch { expected: d, got: s.dim().min(theta.len() + 1) });
    }
    if run_length == 0 || renewals == 0 {
        return Err(Error::InvalidArgument("L and n must be at least 1".into()));
    }
    if replicas == 0 {
        return Err(Error::EmptyRun);
    }
    let k = kappa_couple.unwrap_or(law.kappa()).to_f64_lossy();
    if !(k > 0.0) || 2.0 * d as f64 * k > 1.0 + 1e-15 {
        return Err(Error::InvalidCoupling(k));
    }
    let numerators = par::try_replicas(replicas, |r| {
        renewal_tilted_mass(&LawField::new(law, derive_seed(seed, r as u64)), s, theta, run_length, renewals, k)
    })?;
    let (denominator, exact) = if law.is_iid() {
        let mean = SiteKernel::new(law.effective_mean()).unwrap_or_else(|_| law.mean_kernel().clone());
        let field = Environment::homogeneous(Window::centered(d, 0), &mean, BoundaryPolicy::MeanFill);
        (renewal_tilted_mass(&field, s, theta, run_length, renewals, k)?, true)
    } else {
        let m = replicas.max(10_000);
        let dseed = derive_seed(seed, DENOMINATOR_STREAM);
        let den = par::try_replicas(m, |r| {
            renewal_tilted_mass(&LawField::new(law, derive_seed(dseed, r as u64)), s, theta, run_length, renewals, k)
        })?;
        (mean_stderr(&den).mean, false)
    };
    if !(denominator > 0.0) || !denominator.is_finite() {
        return Err(Error::DegenerateDenominator);
    }
    let samples: Vec<f64> = numerators.iter().map(|v| v / denominator).collect();
    let ms = mean_stderr(&samples);
    Ok(HSamples { samples, mean: ms.mean, stderr: ms.stderr, denominator, exact_denominator: exact })
}
