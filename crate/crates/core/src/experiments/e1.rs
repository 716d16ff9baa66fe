//! Quenched versus annealed boundary free energies over a disorder ladder.

use serde::{Deserialize, Serialize};

use super::{fmt_vec, ExperimentConfig, ResultRow, RowSink};
use crate::lattice::SignVector;
use crate::mgf::{lambda_a_boundary, legendre};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E1Delta {
    pub delta: f64,
    pub thetas: Vec<Vec<f64>>,
    pub lambda_a: Vec<f64>,
    pub lambda_a_ci: Vec<f64>,
    /// Replica mean of the exact per-environment values.
    pub lambda_q: Vec<f64>,
    pub lambda_q_ci: Vec<f64>,
    /// `max_theta (Lambda_a - Lambda_q)`.
    pub sup_gap: f64,
    pub sup_gap_theta: Vec<f64>,
    /// `sqrt(ci_a^2 + ci_q^2)` at the maximizing theta.
    pub sup_gap_ci: f64,
    /// Some theta has a gap above three combined standard errors.
    pub gap_resolved: bool,
    pub xs: Vec<Vec<f64>>,
    pub ia: Vec<f64>,
    pub iq: Vec<f64>,
    /// An argmax sat on the theta-grid edge on either side.
    pub edge: Vec<bool>,
    /// `max |I_q - I_a|` over unflagged x.
    pub rate_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E1Report {
    pub d: usize,
    pub n: usize,
    pub replicas: usize,
    pub per_delta: Vec<E1Delta>,
}

/// For each disorder level: boundary log-MGFs on the theta grid (annealed by
/// Monte Carlo, quenched as the mean of exact per-replica DPs on the same
/// environments), their conjugates on the x grid, and the gaps.
pub fn run_e1_rate_gap(cfg: &ExperimentConfig) -> Result<(E1Report, Vec<ResultRow>)> {
    if cfg.replicas == 0 {
        return Err(Error::EmptyRun);
    }
    let d = cfg.law.d;
    if d < 2 {
        return Err(Error::Config("the boundary comparison needs d >= 2".into()));
    }
    let s = SignVector::all_positive(d);
    let thetas = cfg.theta_grid.build(d - 1);
    let xs = cfg.x_grid.build(d - 1);
    let n = *cfg.n_ladder.iter().max().unwrap();
    let mut sink = RowSink::new(cfg);
    let mut per_delta = Vec::new();
    for &delta in &cfg.delta_ladder {
        let law = cfg.law.build_with_delta(delta)?;
        let mgf = lambda_a_boundary(&law, &s, &thetas, n, cfg.replicas, cfg.master_seed)?;
        let (la, la_ci) = (mgf.annealed.estimates, mgf.annealed.cis);
        let (lq, lq_ci) = (mgf.quenched_mean.estimates, mgf.quenched_mean.cis);
        let dp = delta.to_string();

        let mut best = (f64::NEG_INFINITY, 0usize);
        let mut resolved = false;
        for (i, th) in thetas.iter().enumerate() {
            let gap = la[i] - lq[i];
            let ci = la_ci[i].hypot(lq_ci[i]);
            if gap > best.0 {
                best = (gap, i);
            }
            resolved |= gap > 3.0 * ci;
            let p = [("delta", dp.clone()), ("theta", fmt_vec(th))];
            sink.push("lambda_a", &p, la[i]).ci = Some(la_ci[i]);
            sink.push("lambda_q", &p, lq[i]).ci = Some(lq_ci[i]);
            sink.push("gap", &p, gap).ci = Some(ci);
        }
        let sup_ci = la_ci[best.1].hypot(lq_ci[best.1]);
        let row = sink.push("sup_gap", &[("delta", dp.clone()), ("theta", fmt_vec(&thetas[best.1]))], best.0);
        row.ci = Some(sup_ci);
        if resolved {
            row.flags = "gap_exceeds_3ci".into();
        }

        let ca = legendre(&thetas, &la, &xs)?;
        let cq = legendre(&thetas, &lq, &xs)?;
        let mut rate_gap = 0.0f64;
        let mut edge = Vec::new();
        for (i, x) in xs.iter().enumerate() {
            let flagged = ca.edge_flags[i] || cq.edge_flags[i];
            edge.push(flagged);
            if !flagged {
                rate_gap = rate_gap.max((cq.star_vals[i] - ca.star_vals[i]).abs());
            }
            let p = [("delta", dp.clone()), ("x", fmt_vec(x))];
            let f = if flagged { "edge" } else { "" };
            sink.push("i_a", &p, ca.star_vals[i]).flags = f.into();
            sink.push("i_q", &p, cq.star_vals[i]).flags = f.into();
        }
        sink.push("rate_gap", &[("delta", dp)], rate_gap);

        per_delta.push(E1Delta {
            delta,
            thetas: thetas.clone(),
            lambda_a: la,
            lambda_a_ci: la_ci,
            lambda_q: lq,
            lambda_q_ci: lq_ci,
            sup_gap: best.0,
            sup_gap_theta: thetas[best.1].clone(),
            sup_gap_ci: sup_ci,
            gap_resolved: resolved,
            xs: xs.clone(),
            ia: ca.star_vals,
            iq: cq.star_vals,
            edge,
            rate_gap,
        });
    }
    Ok((E1Report { d, n, replicas: cfg.replicas, per_delta }, sink.rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{ExperimentId, GridSpec};

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_for(ExperimentId::E1);
        cfg.n_ladder = vec![12];
        cfg.replicas = 40;
        cfg.theta_grid = GridSpec::new(-1.0, 1.0, 5);
        cfg.x_grid = GridSpec::new(-0.2, 0.2, 3);
        cfg
    }

    #[test]
    fn zero_disorder_has_no_gap() {
        let mut cfg = small();
        cfg.delta_ladder = vec![0.0];
        let (r, rows) = run_e1_rate_gap(&cfg).unwrap();
        let z = &r.per_delta[0];
        assert!(z.sup_gap.abs() <= 1e-10, "{}", z.sup_gap);
        assert!(z.rate_gap <= 1e-10);
        assert!(rows.iter().all(|r| r.config_hash == cfg.config_hash()));
    }

    #[test]
    fn jensen_direction_with_disorder() {
        let mut cfg = small();
        cfg.delta_ladder = vec![0.2];
        let (r, _) = run_e1_rate_gap(&cfg).unwrap();
        let z = &r.per_delta[0];
        for i in 0..z.thetas.len() {
            assert!(z.lambda_a[i] >= z.lambda_q[i] - 3.0 * z.lambda_q_ci[i]);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = small();
        cfg.replicas = 0;
        assert_eq!(run_e1_rate_gap(&cfg).unwrap_err(), Error::EmptyRun);
        let mut cfg = small();
        cfg.law.d = 1;
        assert!(run_e1_rate_gap(&cfg).is_err());
    }
}
