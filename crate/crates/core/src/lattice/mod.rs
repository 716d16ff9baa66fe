//! Lattice geometry and random environments on `Z^d`.
//!
//! Sites are `&[i64]` of length `d`. Unit steps are indexed `0..2d` in the
//! order `+e_1, -e_1, +e_2, -e_2, ...`, which is also the column order of every
//! kernel table this crate reads or writes.

mod audit;
mod env;
mod io;
mod kernel;
mod law;

pub use audit::{
    disorder_of, imbalance_of, validate_environment, AuditTarget, Measured, ValidationReport,
    Violation, ViolationKind,
};
pub use env::{sample_environment, BoundaryPolicy, Environment, KernelField, LawField, Window};
pub use io::{read_environment_csv, write_environment_csv};
pub use kernel::SiteKernel;
pub use law::{make_iid_law, make_mixing_law, Atom, EnvLaw, MarginalFamily, Mixing};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A unit step `sign * e_axis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Direction {
    axis: usize,
    positive: bool,
}

impl Direction {
    pub fn new(axis: usize, sign: i8) -> Self {
        assert!(sign == 1 || sign == -1, "sign must be +1 or -1");
        Direction { axis, positive: sign > 0 }
    }

    pub fn from_index(i: usize) -> Self {
        Direction { axis: i / 2, positive: i % 2 == 0 }
    }

    #[inline]
    pub fn index(self) -> usize {
        2 * self.axis + usize::from(!self.positive)
    }

    #[inline]
    pub fn axis(self) -> usize {
        self.axis
    }

    #[inline]
    pub fn sign(self) -> i64 {
        if self.positive {
            1
        } else {
            -1
        }
    }

    pub fn opposite(self) -> Self {
        Direction { axis: self.axis, positive: !self.positive }
    }

    /// All `2d` unit steps in index order.
    pub fn all(d: usize) -> impl Iterator<Item = Direction> {
        (0..2 * d).map(Direction::from_index)
    }

    #[inline]
    pub fn step(self, x: &mut [i64]) {
        x[self.axis] += self.sign();
    }

    #[inline]
    pub fn unstep(self, x: &mut [i64]) {
        x[self.axis] -= self.sign();
    }

    pub fn to_vector(self, d: usize) -> Vec<i64> {
        let mut v = vec![0; d];
        self.step(&mut v);
        v
    }

    /// `<v, self>` for a real vector `v`.
    pub fn dot<T: crate::Real>(self, v: &[T]) -> T {
        if self.positive {
            v[self.axis]
        } else {
            -v[self.axis]
        }
    }

    /// Parses `+1`, `-2`, ... (1-based axis) as used in CSV dumps.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let (sign, rest) = match s.as_bytes().first() {
            Some(b'+') => (1, &s[1..]),
            Some(b'-') => (-1, &s[1..]),
            _ => return Err(Error::Parse(format!("direction `{s}`"))),
        };
        let axis: usize = rest.parse().map_err(|_| Error::Parse(format!("direction `{s}`")))?;
        if axis == 0 {
            return Err(Error::Parse(format!("direction `{s}`: axes are 1-based")));
        }
        Ok(Direction::new(axis - 1, sign))
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{}", if self.positive { '+' } else { '-' }, self.axis + 1)
    }
}

/// Orthant pattern `s in {-1, 1}^d`; `V_s = {s_i e_i}` are its allowed steps.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignVector(Vec<i8>);

impl SignVector {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        if signs.is_empty() || signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidArgument(format!("sign vector {signs:?}")));
        }
        Ok(SignVector(signs))
    }

    pub fn all_positive(d: usize) -> Self {
        SignVector(vec![1; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn signs(&self) -> &[i8] {
        &self.0
    }

    /// `s_j e_j`.
    pub fn direction(&self, j: usize) -> Direction {
        Direction::new(j, self.0[j])
    }

    /// `V_s` in axis order.
    pub fn allowed(&self) -> Vec<Direction> {
        (0..self.dim()).map(|j| self.direction(j)).collect()
    }

    pub fn allows(&self, e: Direction) -> bool {
        e.axis < self.dim() && (self.0[e.axis] > 0) == e.positive
    }

    pub fn negated(&self) -> Self {
        SignVector(self.0.iter().map(|s| -s).collect())
    }

    /// `<x, s>`.
    pub fn dot(&self, x: &[i64]) -> i64 {
        x.iter().zip(&self.0).map(|(&a, &s)| a * s as i64).sum()
    }
}

pub fn l1_norm(x: &[i64]) -> i64 {
    x.iter().map(|c| c.abs()).sum()
}

pub fn l1_dist(x: &[i64], y: &[i64]) -> i64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum()
}

/// All sites within l1 distance `radius` of the origin, in lexicographic order.
pub fn l1_ball(d: usize, radius: i64) -> Vec<Vec<i64>> {
    fn rec(d: usize, budget: i64, prefix: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if prefix.len() == d {
            out.push(prefix.clone());
            return;
        }
        for c in -budget..=budget {
            prefix.push(c);
            rec(d, budget - c.abs(), prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if radius >= 0 {
        rec(d, radius, &mut Vec::with_capacity(d), &mut out);
    }
    out
}
