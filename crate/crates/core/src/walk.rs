//! Walk simulation, the boundary-face projection and directed-motion events.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lattice::{l1_norm, Direction, EnvLaw, KernelField, LawField, SignVector};
use crate::renewal::EpsTag;
use crate::{Error, Real, Result};

/// A walk realization. Increments are the source of truth; positions are
/// derived on demand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: Vec<i64>,
    pub increments: Vec<Direction>,
    pub eps_tags: Option<Vec<EpsTag>>,
}

impl Trajectory {
    pub fn new(start: Vec<i64>, increments: Vec<Direction>) -> Self {
        Trajectory { start, increments, eps_tags: None }
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    /// `X_0, ..., X_n`.
    pub fn positions(&self) -> Vec<Vec<i64>> {
        let mut out = Vec::with_capacity(self.len() + 1);
        let mut x = self.start.clone();
        out.push(x.clone());
        for e in &self.increments {
            e.step(&mut x);
            out.push(x.clone());
        }
        out
    }

    pub fn position_at(&self, k: usize) -> Vec<i64> {
        let mut x = self.start.clone();
        for e in &self.increments[..k] {
            e.step(&mut x);
        }
        x
    }

    pub fn endpoint(&self) -> Vec<i64> {
        self.position_at(self.len())
    }

    /// CSV dump: `step_index, dx_1..dx_d, eps_tag`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        let cols: Vec<String> = (1..=d).map(|i| format!("dx_{i}")).collect();
        writeln!(w, "step_index,{},eps_tag", cols.join(","))?;
        for (k, e) in self.increments.iter().enumerate() {
            let dx: Vec<String> = e.to_vector(d).iter().map(|c| c.to_string()).collect();
            let tag = self.eps_tags.as_ref().map(|t| t[k].to_string()).unwrap_or_default();
            writeln!(w, "{},{},{}", k + 1, dx.join(","), tag)?;
        }
        Ok(())
    }
}

/// Draws a step from a kernel with one uniform.
#[inline]
pub fn sample_direction<T: Real>(kernel: &[T], u: f64) -> Direction {
    let mut acc = 0.0;
    for (i, p) in kernel.iter().enumerate() {
        acc += p.to_f64_lossy();
        if u < acc {
            return Direction::from_index(i);
        }
    }
    // u landed in the rounding gap above the cumulative sum
    let last = kernel.iter().rposition(|p| *p > T::zero()).unwrap_or(kernel.len() - 1);
    Direction::from_index(last)
}

/// Walk of `n` steps under the quenched law of `field`.
pub fn simulate_quenched<T: Real, F: KernelField<T> + ?Sized, R: Rng + ?Sized>(
    field: &F,
    x0: &[i64],
    n: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if x0.len() != field.dim() {
        return Err(Error::DimensionMismatch { expected: field.dim(), got: x0.len() });
    }
    let mut kernel = vec![T::zero(); 2 * field.dim()];
    let mut x = x0.to_vec();
    let mut increments = Vec::with_capacity(n);
    for _ in 0..n {
        field.kernel_into(&x, &mut kernel)?;
        let e = sample_direction(&kernel, rng.gen::<f64>());
        e.step(&mut x);
        increments.push(e);
    }
    Ok(Trajectory::new(x0.to_vec(), increments))
}

/// Walk of `n` steps under the annealed law: a fresh environment seed is
/// drawn from `rng` and site kernels are generated on first visit. Because a
/// site's kernel is a pure function of `(seed, site)`, revisits see the same
/// kernel, which is exactly the annealed semantics.
pub fn simulate_annealed<T: Real, R: Rng + ?Sized>(
    law: &EnvLaw<T>,
    x0: &[i64],
    n: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let seed: u64 = rng.gen();
    simulate_quenched(&LawField::new(law, seed), x0, n, rng)
}

/// Projected walk on `Z^{d-1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectedTrajectory {
    pub steps: Vec<Vec<i64>>,
    /// All pre-image steps lay in `V_s`.
    pub admissible: bool,
    /// `d - 1`, kept so an empty walk still has a well-sized endpoint.
    pub dim: usize,
}

impl ProjectedTrajectory {
    /// `S_k`.
    pub fn partial_sum(&self, k: usize) -> Vec<i64> {
        let mut s = vec![0; self.dim];
        for st in &self.steps[..k] {
            s.iter_mut().zip(st).for_each(|(a, b)| *a += b);
        }
        s
    }

    pub fn endpoint(&self) -> Vec<i64> {
        self.partial_sum(self.steps.len())
    }
}

/// Image of a unit step under the boundary-face projection for orthant `s`:
/// `s_j e_j -> e_j` for `j < d`, `s_d e_d -> -(e_1 + ... + e_{d-1})`,
/// extended linearly (`-s_j e_j` maps to minus the image of `s_j e_j`).
pub fn pi_step(s: &SignVector, e: Direction) -> Vec<i64> {
    let d = s.dim();
    let mut v = vec![0; d - 1];
    let along = if s.allows(e) { 1 } else { -1 };
    if e.axis() + 1 < d {
        v[e.axis()] = along;
    } else {
        v.iter_mut().for_each(|c| *c = -along);
    }
    v
}

/// Real-valued `<theta, pi(e)>`.
pub fn pi_dot<T: Real>(s: &SignVector, e: Direction, theta: &[T]) -> T {
    pi_step(s, e).iter().zip(theta).map(|(&c, &t)| T::from_i64(c).unwrap() * t).sum()
}

pub fn project_pi(s: &SignVector, traj: &Trajectory) -> ProjectedTrajectory {
    ProjectedTrajectory {
        steps: traj.increments.iter().map(|&e| pi_step(s, e)).collect(),
        admissible: traj.increments.iter().all(|&e| s.allows(e)),
        dim: s.dim() - 1,
    }
}

/// Whether every increment with index in `(m, n]` lies in `V_s`.
pub fn indicator_b(traj: &Trajectory, s: &SignVector, m: usize, n: usize) -> Result<bool> {
    if m > n || n > traj.len() {
        return Err(Error::IndexOutOfRange(format!("(m, n] = ({m}, {n}] for a walk of length {}", traj.len())));
    }
    Ok(traj.increments[m..n].iter().all(|&e| s.allows(e)))
}

/// Inverse of the projection on the level `<x, s> = n`: the site reached by a
/// directed walk of `n` steps whose projection ends at `s_n`. `None` if no
/// directed walk has that projection.
pub fn reconstruct(s: &SignVector, n: i64, s_n: &[i64]) -> Option<Vec<i64>> {
    let d = s.dim() as i64;
    let rest = n - s_n.iter().sum::<i64>();
    if rest % d != 0 {
        return None;
    }
    let k_last = rest / d;
    let counts: Vec<i64> = s_n.iter().map(|&c| c + k_last).chain(std::iter::once(k_last)).collect();
    if counts.iter().any(|&k| k < 0) {
        return None;
    }
    Some(counts.iter().zip(s.signs()).map(|(&k, &sg)| k * sg as i64).collect())
}

/// Membership of `x` in the cone `{v : <v - x0, l> >= zeta |l| |v - x0|_2}`,
/// decided on squared integer quantities.
pub fn in_cone(x0: &[i64], x: &[i64], zeta: f64, ell: Direction) -> bool {
    let v: Vec<i64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
    let along = v[ell.axis()] * ell.sign();
    if along < 0 {
        return false;
    }
    let norm2: i64 = v.iter().map(|c| c * c).sum();
    (along * along) as f64 >= zeta * zeta * norm2 as f64
}

/// `|X_n - X_0|_1 / n`, at most one by construction.
pub fn l1_speed(traj: &Trajectory) -> f64 {
    if traj.is_empty() {
        return 0.0;
    }
    let end = traj.endpoint();
    let disp: Vec<i64> = end.iter().zip(&traj.start).map(|(a, b)| a - b).collect();
    l1_norm(&disp) as f64 / traj.len() as f64
}
