//! Zero set of the quenched rate on a velocity grid.

use serde::{Deserialize, Serialize};

use super::{fmt_vec, ExperimentConfig, ResultRow, RowSink};
use crate::rate::estimate_iq;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ZeroSet {
    Point { at: Vec<f64> },
    /// Endpoints of a segment on a line through the origin.
    Segment { from: Vec<f64>, to: Vec<f64> },
}

/// Classifies `{eta : rate(eta) <= threshold}`: a point when its diameter is
/// at most `step`, a segment when every member lies within `step` of the
/// line through the origin and the member farthest from it. Empty or
/// non-collinear sets are inconclusive.
pub fn classify_zero_set(etas: &[Vec<f64>], rates: &[f64], threshold: f64, step: f64) -> Result<ZeroSet> {
    let set: Vec<&Vec<f64>> = etas.iter().zip(rates).filter(|(_, &r)| r <= threshold).map(|(e, _)| e).collect();
    if set.is_empty() {
        return Err(Error::Inconclusive(format!("no grid point has rate <= {threshold}; refine the grid or raise N")));
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let tol = step * (1.0 + 1e-9);
    let diameter = set.iter().flat_map(|a| set.iter().map(move |b| dist(a, b))).fold(0.0, f64::max);
    if diameter <= tol {
        let k = set.len() as f64;
        let at = (0..set[0].len()).map(|i| set.iter().map(|e| e[i]).sum::<f64>() / k).collect();
        return Ok(ZeroSet::Point { at });
    }
    let norm = |a: &[f64]| a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let far = set.iter().max_by(|a, b| norm(a).total_cmp(&norm(b))).unwrap();
    let unit: Vec<f64> = far.iter().map(|x| x / norm(far)).collect();
    let proj = |a: &[f64]| a.iter().zip(&unit).map(|(x, u)| x * u).sum::<f64>();
    for e in &set {
        let t = proj(e);
        let off: f64 = e.iter().zip(&unit).map(|(x, u)| (x - t * u).powi(2)).sum::<f64>().sqrt();
        if off > tol {
            return Err(Error::Inconclusive(format!("sublevel set is not collinear with the origin (offset {off} at {e:?})")));
        }
    }
    let lo = set.iter().min_by(|a, b| proj(a).total_cmp(&proj(b))).unwrap();
    let hi = set.iter().max_by(|a, b| proj(a).total_cmp(&proj(b))).unwrap();
    Ok(ZeroSet::Segment { from: lo.to_vec(), to: hi.to_vec() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2Report {
    pub etas: Vec<Vec<f64>>,
    pub rates: Vec<f64>,
    pub cis: Vec<f64>,
    pub grid_step: f64,
    /// `(threshold, classification)` in config order.
    pub sweep: Vec<(f64, ZeroSet)>,
    /// Every threshold gave the same classification.
    pub stable: bool,
}

impl E2Report {
    pub fn classification(&self) -> &ZeroSet {
        &self.sweep[0].1
    }
}

/// Estimates `I_q` at every grid point of the l1 ball and classifies the
/// sublevel set at each configured threshold.
pub fn run_e2_zero_set(cfg: &ExperimentConfig) -> Result<(E2Report, Vec<ResultRow>)> {
    if cfg.replicas == 0 {
        return Err(Error::EmptyRun);
    }
    let law = cfg.law.build()?;
    let etas: Vec<Vec<f64>> = cfg
        .eta_grid
        .build(cfg.law.d)
        .into_iter()
        .filter(|e| e.iter().map(|v| v.abs()).sum::<f64>() <= 1.0 + 1e-12)
        .collect();
    let mut sink = RowSink::new(cfg);
    let (mut rates, mut cis) = (Vec::new(), Vec::new());
    for eta in &etas {
        let est = estimate_iq(&law, eta, &cfg.u_ladder, &cfg.n_ladder, cfg.replicas, cfg.master_seed)?;
        for e in &est.entries {
            let p = [("eta", fmt_vec(eta)), ("u", e.u.to_string()), ("N", e.n.to_string())];
            let row = sink.push("g_over_n", &p, e.mean);
            row.ci = Some(e.stddev);
            if e.censored > 0 {
                row.flags = format!("censored={}", e.censored);
            }
        }
        sink.push("i_q", &[("eta", fmt_vec(eta))], est.extrapolated).ci = Some(est.ci);
        rates.push(est.extrapolated);
        cis.push(est.ci);
    }
    let step = cfg.eta_grid.step();
    let mut sweep = Vec::new();
    for &thr in &cfg.thresholds {
        let z = classify_zero_set(&etas, &rates, thr, step)?;
        let (metric, params) = match &z {
            ZeroSet::Point { at } => ("zero_point", vec![("threshold", thr.to_string()), ("at", fmt_vec(at))]),
            ZeroSet::Segment { from, to } => {
                ("zero_segment", vec![("threshold", thr.to_string()), ("from", fmt_vec(from)), ("to", fmt_vec(to))])
            }
        };
        let len = match &z {
            ZeroSet::Point { .. } => 0.0,
            ZeroSet::Segment { from, to } => from.iter().zip(to).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
        };
        sink.push(metric, &params, len);
        sweep.push((thr, z));
    }
    let stable = sweep.iter().all(|(_, z)| *z == sweep[0].1);
    sink.push("sweep_stable", &[], if stable { 1.0 } else { 0.0 }).pass = Some(stable);
    Ok((E2Report { etas, rates, cis, grid_step: step, sweep, stable }, sink.rows))
}
