//! Consolidated identity and calibration suite.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fmt_vec, ExperimentConfig, ResultRow, RowSink};
use crate::lattice::{make_iid_law, MarginalFamily, SignVector, SiteKernel};
use crate::mgf::gradient_sandwich_check;
use crate::renewal::{gamblers_ruin_check, h_martingale_sample, qz_identity_check, uz_theta};
use crate::rng::{derive_seed, replica_rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E3Check {
    pub name: String,
    pub params: String,
    pub lhs: f64,
    pub rhs: f64,
    pub abs_err: f64,
    /// Tolerance the error was compared with.
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E3Report {
    pub checks: Vec<E3Check>,
    pub all_pass: bool,
}

impl E3Report {
    pub fn failures(&self) -> impl Iterator<Item = &E3Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn count(&self, name: &str) -> (usize, usize) {
        let of: Vec<_> = self.checks.iter().filter(|c| c.name == name).collect();
        (of.iter().filter(|c| c.pass).count(), of.len())
    }
}

struct Suite {
    checks: Vec<E3Check>,
}

impl Suite {
    fn add(&mut self, name: &str, params: String, lhs: f64, rhs: f64, tol: f64) {
        let abs_err = (lhs - rhs).abs();
        self.checks.push(E3Check { name: name.into(), params, lhs, rhs, abs_err, tol, pass: abs_err <= tol });
    }
}

const STREAM_GAMBLER: u64 = 1;
const STREAM_SANDWICH: u64 = 2;
const STREAM_MARTINGALE: u64 = 3;
const STREAM_TILT: u64 = 4;

fn sign_grid(d: usize) -> Vec<Vec<f64>> {
    let vals = [0.0, 0.3, -0.3];
    (0..3usize.pow(d as u32))
        .map(|mut c| {
            (0..d)
                .map(|_| {
                    let v = vals[c % 3];
                    c /= 3;
                    v
                })
                .collect()
        })
        .collect()
}

/// Runs, in order: the exact tilt identity on the small grid (1e-10), the
/// tilt algebra on random pairs (1e-12), gambler's ruin at `10 * replicas`
/// walks (4 sigma), the gradient sandwich for the configured law, and the
/// renewal martingale mean (4 sigma, and exactly 1 without disorder).
/// `max(n_ladder)` bounds the identity path length.
pub fn run_e3_identity_suite(cfg: &ExperimentConfig) -> Result<(E3Report, Vec<ResultRow>)> {
    if cfg.replicas == 0 {
        return Err(Error::EmptyRun);
    }
    let mut suite = Suite { checks: Vec::new() };
    let n_max = *cfg.n_ladder.iter().max().unwrap();

    for d in 1..=2usize {
        let zs: Vec<Vec<f64>> = if d == 1 { vec![vec![0.3]] } else { vec![vec![0.3, 0.0], vec![0.2, 0.1]] };
        for delta in [0.0, 0.1, 0.2] {
            let law = make_iid_law(d, 0.1, SiteKernel::uniform(d), MarginalFamily::two_point(), delta)?;
            let mean = SiteKernel::new(law.effective_mean())?;
            for z in &zs {
                let tilt = uz_theta(&mean, z)?.with_theta_offset(cfg.corrupt_theta_z);
                for n in 1..=n_max {
                    for theta in sign_grid(d) {
                        let r = qz_identity_check(&law, &tilt, &theta, n)?;
                        let p = format!("d={d};delta={delta};z={};n={n};theta={}", fmt_vec(z), fmt_vec(&theta));
                        suite.add("qz_identity", p, r.lhs, r.rhs, 1e-10);
                    }
                }
            }
        }
    }

    let mut rng = replica_rng(derive_seed(cfg.master_seed, STREAM_TILT), 0);
    for i in 0..50 {
        let d = 1 + i % 3;
        let raw: Vec<f64> = (0..2 * d).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mean = SiteKernel::new(raw.iter().map(|v| v / total).collect())?;
        let radius = rng.gen_range(0.0..0.95);
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let l1: f64 = w.iter().map(|v| v.abs()).sum::<f64>().max(1e-12);
        let z: Vec<f64> = w.iter().map(|v| v * radius / l1).collect();
        let res = uz_theta(&mean, &z)?.residuals();
        suite.add("qz_tilt_algebra", format!("d={d};z={}", fmt_vec(&z)), res.max(), 0.0, 1e-12);
    }

    let ks: Vec<u32> = (1..=8).collect();
    for (i, a) in [0.0, 0.25, 0.5].into_iter().enumerate() {
        for row in gamblers_ruin_check(a, &ks, 10 * cfg.replicas, derive_seed(cfg.master_seed, STREAM_GAMBLER + 16 * i as u64))? {
            suite.add("gamblers_ruin", format!("a={a};k={}", row.k), row.mc, row.formula, 4.0 * row.sigma);
        }
    }

    let law = cfg.law.build()?;
    let d = law.dim();
    if d >= 2 {
        let s = SignVector::all_positive(d);
        let thetas = cfg.theta_grid.build(d - 1);
        let n = 8 * n_max;
        let reps = (cfg.replicas / 10).max(1);
        let sw = gradient_sandwich_check(&law, &s, &thetas, n, reps, derive_seed(cfg.master_seed, STREAM_SANDWICH), 0.01)?;
        for row in &sw.rows {
            let p = format!("theta={};component={};n={n}", fmt_vec(&row.theta), row.component);
            // compared with the nearest point of the band
            let nearest = row.gradient.max(row.lower).min(row.upper);
            let tol = 3.0 * row.stderr + 2.0 * sw.h * sw.h;
            suite.checks.push(E3Check {
                name: "gradient_sandwich".into(),
                params: p,
                lhs: row.gradient,
                rhs: nearest,
                abs_err: (row.gradient - nearest).abs(),
                tol,
                pass: !row.violated,
            });
        }

        let theta = vec![0.2; d - 1];
        let h = h_martingale_sample(&law, &s, &theta, 3, 2, cfg.replicas, derive_seed(cfg.master_seed, STREAM_MARTINGALE), None)?;
        let p = format!("d={d};delta={};L=3;n=2;theta={}", law.delta(), fmt_vec(&theta));
        suite.add("martingale_mean", p, h.mean, 1.0, 4.0 * h.stderr);
        let flat = law.with_delta(0.0)?;
        let h0 = h_martingale_sample(&flat, &s, &theta, 3, 2, 64, derive_seed(cfg.master_seed, STREAM_MARTINGALE), None)?;
        let worst = h0.samples.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        suite.add("martingale_flat", format!("d={d};L=3;n=2"), worst, 0.0, 0.0);
    }

    let all_pass = suite.checks.iter().all(|c| c.pass);
    let mut sink = RowSink::new(cfg);
    for c in &suite.checks {
        let row = sink.push_joined(&c.name, c.params.clone(), c.lhs);
        row.reference = Some(c.rhs);
        row.ci = Some(c.tol);
        row.pass = Some(c.pass);
    }
    sink.push("all_pass", &[], if all_pass { 1.0 } else { 0.0 }).pass = Some(all_pass);
    Ok((E3Report { checks: suite.checks, all_pass }, sink.rows))
}
