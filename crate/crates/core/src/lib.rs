//! Random walks in uniformly elliptic random environments on `Z^d`.
//!
//! The crate builds environments with controlled disorder and finite-range
//! dependence, simulates quenched and annealed walks, and computes the
//! objects of their large deviation theory exactly where a lattice dynamic
//! program exists and by Monte Carlo elsewhere:
//!
//! - [`lattice`]: directions, windows, environment laws and audits.
//! - [`walk`]: trajectories, projection onto a boundary face, cone events.
//! - [`path_space`]: hitting counts and the path-conditioned annealed kernel.
//! - [`rate`]: the penalized hitting functional `G_u` and quenched rates.
//! - [`mgf`]: boundary log-MGFs, Legendre transforms, minimax rate at zero.
//! - [`renewal`]: the coupled auxiliary walk, renewal times, the tilted walk.
//! - [`experiments`]: declarative, reproducible experiment runs.
//!
//! Numerical routines are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix `f64`, which is what the experiments use.

pub mod error;
pub mod experiments;
pub mod lattice;
pub mod mgf;
pub mod par;
pub mod path_space;
pub mod rate;
pub mod renewal;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
pub use scalar::Real;

pub type SiteKernel64 = lattice::SiteKernel<f64>;
pub type EnvLaw64 = lattice::EnvLaw<f64>;
pub type Environment64 = lattice::Environment<f64>;
pub type HittingProbTable64 = rate::HittingProbTable<f64>;
pub type MgfGrid64 = mgf::MgfGrid<f64>;
pub type ConjugateGrid64 = mgf::ConjugateGrid<f64>;
pub type QzTilt64 = renewal::QzTilt<f64>;
