//! The penalized hitting functional
//! `G_{u,omega}(t, x, y) = -log sup_n e^{-u|n-t|} P_{x,omega}(X_n = y)`
//! by forward dynamic programming, its structural checks, and quenched rate
//! estimates `G(N, 0, y_N) / N`.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lattice::{l1_norm, Direction, EnvLaw, Environment, KernelField, LawField, Window};
use crate::rng::{derive_seed, replica_rng};
use crate::scalar::log_add_exp;
use crate::stats::mean_stderr;
use crate::{par, Error, Real, Result};

/// Above this horizon the DP runs on log-probabilities.
pub const LOG_DOMAIN_THRESHOLD: usize = 300;

/// `P_{x,omega}(X_n = y)` for `0 <= n <= N` on the box of radius `N` around `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct HittingProbTable<T> {
    pub start: Vec<i64>,
    pub horizon: usize,
    pub window: Window,
    pub probs: Vec<Vec<T>>,
}

impl<T: Real> HittingProbTable<T> {
    pub fn prob(&self, n: usize, y: &[i64]) -> T {
        self.window.index_of(y).map_or(T::zero(), |i| self.probs[n][i])
    }

    pub fn row_sum(&self, n: usize) -> T {
        self.probs[n].iter().copied().sum()
    }
}

/// Forward Chapman-Kolmogorov recursion from `x` for `n` steps.
pub fn hitting_prob_table<T: Real, F: KernelField<T> + ?Sized>(field: &F, x: &[i64], n: usize) -> Result<HittingProbTable<T>> {
    let d = field.dim();
    let window = Window::around(x, n);
    let dirs: Vec<Direction> = Direction::all(d).collect();
    let mut row = vec![T::zero(); window.len()];
    row[window.index_of(x).unwrap()] = T::one();
    let mut probs = vec![row];
    let mut k = vec![T::zero(); 2 * d];
    for _ in 0..n {
        let cur = probs.last().unwrap();
        let mut next = vec![T::zero(); window.len()];
        for (i, &p) in cur.iter().enumerate() {
            if p.is_zero() {
                continue;
            }
            let site = window.site(i);
            field.kernel_into(&site, &mut k)?;
            for &e in &dirs {
                let mut y = site.clone();
                e.step(&mut y);
                let j = window.index_of(&y).expect("ball fits the window");
                next[j] = next[j] + p * k[e.index()];
            }
        }
        probs.push(next);
    }
    Ok(HittingProbTable { start: x.to_vec(), horizon: n, window, probs })
}

/// One evaluation of `G_u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GValue {
    /// `+inf` when no `n <= N_max` reaches the target.
    pub value: f64,
    /// The sup was cut at `N_max` before the envelope certified it.
    pub truncated: bool,
    /// Time at which the sup was attained.
    pub argmax_n: Option<usize>,
}

impl GValue {
    pub fn is_infinite(&self) -> bool {
        self.value.is_infinite()
    }

    pub fn is_exact(&self) -> bool {
        !self.truncated && self.value.is_finite()
    }
}

/// A `(u, t, y)` request sharing the start point of one DP run.
#[derive(Debug, Clone, PartialEq)]
pub struct GQuery {
    pub u: f64,
    pub t: f64,
    pub y: Vec<i64>,
}

struct QueryState {
    best: f64,
    argmax: Option<usize>,
    done: bool,
}

/// Evaluates several `G_u(t, x, y)` from a single forward DP started at `x`.
/// The DP stops once every query is certified (for `n > t` the envelope
/// `e^{-u(n-t)}` bounds all later terms) or at `n_max`.
pub fn g_u_many<T: Real, F: KernelField<T> + ?Sized>(field: &F, x: &[i64], queries: &[GQuery], n_max: usize) -> Result<Vec<GValue>> {
    for q in queries {
        if !(q.u > 0.0) || !(q.t >= 0.0) {
            return Err(Error::InvalidArgument(format!("G_u needs u > 0 and t >= 0, got u = {}, t = {}", q.u, q.t)));
        }
        if q.y.len() != x.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: q.y.len() });
        }
    }
    let d = field.dim();
    let window = Window::around(x, n_max);
    let dirs: Vec<Direction> = Direction::all(d).collect();
    let log_domain = n_max > LOG_DOMAIN_THRESHOLD;
    let targets: Vec<Option<usize>> = queries.iter().map(|q| window.index_of(&q.y)).collect();
    let mut states: Vec<QueryState> = queries.iter().map(|_| QueryState { best: f64::NEG_INFINITY, argmax: None, done: false }).collect();

    // `cur` holds probabilities, or log-probabilities in log mode; `scale`
    // is the log of a common factor used in linear mode.
    let zero = if log_domain { f64::NEG_INFINITY } else { 0.0 };
    let mut cur = vec![zero; window.len()];
    cur[window.index_of(x).unwrap()] = if log_domain { 0.0 } else { 1.0 };
    let mut scale = 0.0f64;
    let mut k = vec![T::zero(); 2 * d];
    let mut n = 0usize;
    loop {
        for (qi, q) in queries.iter().enumerate() {
            let st = &mut states[qi];
            if st.done {
                continue;
            }
            if let Some(i) = targets[qi] {
                let lp = if log_domain { cur[i] } else if cur[i] > 0.0 { cur[i].ln() + scale } else { f64::NEG_INFINITY };
                let term = -q.u * (n as f64 - q.t).abs() + lp;
                if term > st.best {
                    st.best = term;
                    st.argmax = Some(n);
                }
            }
            if n as f64 > q.t && -q.u * (n as f64 - q.t) < st.best {
                st.done = true;
            }
        }
        if states.iter().all(|s| s.done) || n == n_max {
            break;
        }
        let mut next = vec![zero; window.len()];
        for i in 0..window.len() {
            let v = cur[i];
            if v == zero {
                continue;
            }
            let site = window.site(i);
            field.kernel_into(&site, &mut k)?;
            for &e in &dirs {
                let mut y = site.clone();
                e.step(&mut y);
                let j = window.index_of(&y).expect("ball fits the window");
                let p = k[e.index()].to_f64_lossy();
                if log_domain {
                    next[j] = log_add_exp(next[j], v + p.ln());
                } else {
                    next[j] += v * p;
                }
            }
        }
        if !log_domain {
            let m = next.iter().copied().fold(0.0, f64::max);
            if m > 0.0 && m < 1e-200 {
                next.iter_mut().for_each(|v| *v /= m);
                scale += m.ln();
            }
        }
        cur = next;
        n += 1;
    }
    Ok(states
        .iter()
        .map(|s| GValue { value: -s.best, truncated: !s.done && s.best.is_finite(), argmax_n: s.argmax })
        .collect())
}

/// `G_{u,omega}(t, x, y)` with the sup cut at `n_max`.
pub fn g_u<T: Real, F: KernelField<T> + ?Sized>(field: &F, u: f64, t: f64, x: &[i64], y: &[i64], n_max: usize) -> Result<GValue> {
    Ok(g_u_many(field, x, &[GQuery { u, t, y: y.to_vec() }], n_max)?[0])
}

/// Outcome of the structural checks on `G_u`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GPropertyReport {
    pub tuples: usize,
    /// Tuples skipped because some value was truncated or infinite.
    pub skipped: usize,
    pub nonnegativity_violations: usize,
    pub shift_violations: usize,
    pub max_shift_error: f64,
    pub subadditivity_violations: usize,
    pub lipschitz_violations: usize,
    pub max_lipschitz_ratio: f64,
}

impl GPropertyReport {
    pub fn passed(&self) -> bool {
        self.nonnegativity_violations == 0
            && self.shift_violations == 0
            && self.subadditivity_violations == 0
            && self.lipschitz_violations == 0
    }
}

fn random_site<R: Rng>(rng: &mut R, d: usize, r: i64) -> Vec<i64> {
    loop {
        let v: Vec<i64> = (0..d).map(|_| rng.gen_range(-r..=r)).collect();
        if l1_norm(&v) <= r {
            return v;
        }
    }
}

fn add(a: &[i64], b: &[i64]) -> Vec<i64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Checks nonnegativity, shift covariance on the periodic torus of `env`,
/// subadditivity `G(t+t',0,x+y) <= G(t,0,x) + G(t',x,x+y)` and the
/// Lipschitz bound with constant `u + log(1/kappa)` on `samples` random
/// tuples. Times are drawn from `0..=t_max`, displacements from the l1 ball
/// of radius `r_max`.
#[allow(clippy::too_many_arguments)]
pub fn check_g_properties<T: Real>(
    env: &Environment<T>,
    u: f64,
    kappa: f64,
    samples: usize,
    t_max: usize,
    r_max: i64,
    n_max: usize,
    seed: u64,
) -> Result<GPropertyReport> {
    let env = env.clone().with_policy(crate::lattice::BoundaryPolicy::Periodic, None)?;
    let d = env.window().dim();
    let lip = u + (1.0 / kappa).ln();
    let origin = vec![0i64; d];
    let rows = par::try_replicas(samples, |i| -> Result<GPropertyReport> {
        let mut rng = replica_rng(seed, i as u64);
        let mut rep = GPropertyReport { tuples: 1, ..Default::default() };
        let t1 = rng.gen_range(0..=t_max) as f64;
        let t2 = rng.gen_range(0..=t_max) as f64;
        let x = random_site(&mut rng, d, r_max);
        let y = random_site(&mut rng, d, r_max);
        let g = |t: f64, a: &[i64], b: &[i64]| g_u(&env, u, t, a, b, n_max);

        let g_x = g(t1, &origin, &x)?;
        let g_y = g(t2, &x, &add(&x, &y))?;
        let g_xy = g(t1 + t2, &origin, &add(&x, &y))?;
        // shift covariance
        let z = random_site(&mut rng, d, r_max);
        let shifted = env.shifted(&z)?;
        let lhs = g(t1, &add(&origin, &z), &add(&x, &z))?;
        let rhs = g_u(&shifted, u, t1, &origin, &x, n_max)?;
        // Lipschitz partner: one random unit perturbation in each argument
        let dt = rng.gen_range(-2i64..=2);
        let t3 = (t1 + dt as f64).max(0.0);
        let dx = random_site(&mut rng, d, 1);
        let dy = random_site(&mut rng, d, 1);
        let g_p = g(t3, &dx, &add(&x, &dy))?;

        let all = [g_x, g_y, g_xy, lhs, rhs, g_p];
        if all.iter().any(|v| !v.is_exact()) {
            rep.skipped = 1;
            return Ok(rep);
        }
        if all.iter().any(|v| v.value < -1e-12) {
            rep.nonnegativity_violations = 1;
        }
        let err = (lhs.value - rhs.value).abs();
        rep.max_shift_error = err;
        if err > 1e-10 {
            rep.shift_violations = 1;
        }
        let bound = g_x.value + g_y.value;
        if g_xy.value > bound + 1e-12 * bound.abs().max(1.0) {
            rep.subadditivity_violations = 1;
        }
        let dist = (t3 - t1).abs() + l1_norm(&dx) as f64 + l1_norm(&dy) as f64;
        let diff = (g_p.value - g_x.value).abs();
        if dist > 0.0 {
            rep.max_lipschitz_ratio = diff / dist;
        }
        if diff > lip * dist + 1e-12 * g_x.value.abs().max(1.0) {
            rep.lipschitz_violations = 1;
        }
        Ok(rep)
    })?;
    Ok(rows.into_iter().fold(GPropertyReport::default(), |mut a, r| {
        a.tuples += r.tuples;
        a.skipped += r.skipped;
        a.nonnegativity_violations += r.nonnegativity_violations;
        a.shift_violations += r.shift_violations;
        a.max_shift_error = a.max_shift_error.max(r.max_shift_error);
        a.subadditivity_violations += r.subadditivity_violations;
        a.lipschitz_violations += r.lipschitz_violations;
        a.max_lipschitz_ratio = a.max_lipschitz_ratio.max(r.max_lipschitz_ratio);
        a
    }))
}

/// Lattice point nearest to `n * eta` with `|y|_1 <= n` and `|y|_1 = n mod 2`.
pub fn target_site(eta: &[f64], n: usize) -> Vec<i64> {
    let d = eta.len();
    let goal: Vec<f64> = eta.iter().map(|e| e * n as f64).collect();
    let mut best: Option<(f64, Vec<i64>)> = None;
    let mut cand = vec![0i64; d];
    let count = 4usize.pow(d as u32);
    for code in 0..count {
        let mut c = code;
        for i in 0..d {
            cand[i] = goal[i].floor() as i64 - 1 + (c % 4) as i64;
            c /= 4;
        }
        let l1 = l1_norm(&cand);
        if l1 > n as i64 || (l1 - n as i64).rem_euclid(2) != 0 {
            continue;
        }
        let dist: f64 = cand.iter().zip(&goal).map(|(&a, &b)| (a as f64 - b).powi(2)).sum();
        if best.as_ref().map_or(true, |(bd, _)| dist < *bd - 1e-12) {
            best = Some((dist, cand.clone()));
        }
    }
    best.expect("a parity-matching point lies within one step of n*eta").1
}

/// Aggregate over replicas at one `(u, N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub u: f64,
    pub n: usize,
    pub target: Vec<i64>,
    /// Finite per-replica values `G/N`.
    pub values: Vec<f64>,
    /// Replicas whose value was infinite or truncated.
    pub censored: usize,
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub eta: Vec<f64>,
    pub entries: Vec<RateEntry>,
    /// Mean at the largest `(u, N)`.
    pub extrapolated: f64,
    /// Standard error across replicas at the largest `(u, N)`.
    pub ci: f64,
}

impl RateEstimate {
    pub fn entry(&self, u: f64, n: usize) -> Option<&RateEntry> {
        self.entries.iter().find(|e| e.u == u && e.n == n)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.eta.len();
        let mut cols: Vec<String> = (1..=d).map(|i| format!("eta_{i}")).collect();
        cols.extend(["u", "N", "replica", "value"].map(String::from));
        writeln!(w, "{}", cols.join(","))?;
        let eta: Vec<String> = self.eta.iter().map(|v| v.to_string()).collect();
        for e in &self.entries {
            for (r, v) in e.values.iter().enumerate() {
                writeln!(w, "{},{},{},{},{}", eta.join(","), e.u, e.n, r, v)?;
            }
        }
        writeln!(w, "{},summary,summary,extrapolated,{}", eta.join(","), self.extrapolated)?;
        Ok(())
    }
}

/// Default u-ladder.
pub const U_LADDER: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];

/// Estimates `I_q(eta)` by `G_u(N, 0, y_N) / N` over ladders of `u` and
/// `N`, one exact DP per replica environment and `N`. `N_max = 4 N`.
pub fn estimate_iq<T: Real>(
    law: &EnvLaw<T>,
    eta: &[f64],
    u_ladder: &[f64],
    n_ladder: &[usize],
    replicas: usize,
    seed: u64,
) -> Result<RateEstimate> {
    if eta.len() != law.dim() {
        return Err(Error::DimensionMismatch { expected: law.dim(), got: eta.len() });
    }
    if eta.iter().map(|e| e.abs()).sum::<f64>() > 1.0 + 1e-12 {
        return Err(Error::InvalidArgument(format!("|eta|_1 > 1 for eta = {eta:?}")));
    }
    if u_ladder.is_empty() || n_ladder.is_empty() {
        return Err(Error::InvalidArgument("empty ladder".into()));
    }
    if replicas == 0 {
        return Err(Error::EmptyRun);
    }
    let per_replica: Vec<Vec<Vec<GValue>>> = par::try_replicas(replicas, |r| {
        let field = LawField::new(law, derive_seed(seed, r as u64));
        let origin = vec![0i64; law.dim()];
        n_ladder
            .iter()
            .map(|&n| {
                let y = target_site(eta, n);
                let qs: Vec<GQuery> = u_ladder.iter().map(|&u| GQuery { u, t: n as f64, y: y.clone() }).collect();
                g_u_many(&field, &origin, &qs, 4 * n.max(1))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut entries = Vec::new();
    for (ni, &n) in n_ladder.iter().enumerate() {
        for (ui, &u) in u_ladder.iter().enumerate() {
            let mut values = Vec::new();
            let mut censored = 0;
            for rep in &per_replica {
                let g = rep[ni][ui];
                if g.is_exact() {
                    values.push(g.value / n.max(1) as f64);
                } else {
                    censored += 1;
                }
            }
            let ms = mean_stderr(&values);
            let stddev = ms.stderr * (values.len() as f64).sqrt();
            entries.push(RateEntry { u, n, target: target_site(eta, n), values, censored, mean: ms.mean, stddev });
        }
    }
    let u_top = u_ladder.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n_top = *n_ladder.iter().max().unwrap();
    let top = entries.iter().find(|e| e.u == u_top && e.n == n_top).unwrap();
    let ci = if top.values.len() > 1 { top.stddev / (top.values.len() as f64).sqrt() } else { 0.0 };
    Ok(RateEstimate { eta: eta.to_vec(), extrapolated: top.mean, ci, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_iid_law, BoundaryPolicy, MarginalFamily, SiteKernel};

    fn homogeneous(d: usize, probs: Vec<f64>, r: usize) -> Environment<f64> {
        Environment::homogeneous(Window::centered(d, r), &SiteKernel::new(probs).unwrap(), BoundaryPolicy::MeanFill)
    }

    #[test]
    fn table_examples() {
        let env = homogeneous(1, vec![0.5, 0.5], 5);
        let t = hitting_prob_table(&env, &[0], 1).unwrap();
        assert_eq!(t.prob(1, &[-1]), 0.5);
        assert_eq!(t.prob(1, &[1]), 0.5);
        let env = homogeneous(1, vec![0.7, 0.3], 5);
        let t = hitting_prob_table(&env, &[0], 2).unwrap();
        assert!((t.prob(2, &[0]) - 0.42).abs() < 1e-15);
        assert_eq!(t.prob(0, &[0]), 1.0);
    }

    #[test]
    fn table_rows_parity_and_support() {
        let env = homogeneous(2, vec![0.3, 0.2, 0.35, 0.15], 8);
        let t = hitting_prob_table(&env, &[1, -1], 8).unwrap();
        for n in 0..=8 {
            assert!((t.row_sum(n) - 1.0).abs() < 1e-12 * (n.max(1)) as f64);
            for (i, &p) in t.probs[n].iter().enumerate() {
                let y = t.window.site(i);
                let r = (y[0] - 1).abs() + (y[1] + 1).abs();
                if p > 0.0 {
                    assert!(r <= n as i64 && (r - n as i64) % 2 == 0);
                }
            }
        }
    }

    #[test]
    fn strict_window_exhausts() {
        let env = homogeneous(1, vec![0.5, 0.5], 2).with_policy(BoundaryPolicy::Strict, None).unwrap();
        assert!(matches!(hitting_prob_table(&env, &[0], 5), Err(Error::WindowExhausted(_))));
    }

    #[test]
    fn g_examples() {
        let env = homogeneous(1, vec![0.7, 0.3], 50);
        assert_eq!(g_u(&env, 3.0, 0.0, &[0], &[0], 10).unwrap().value, 0.0);
        let g = g_u(&env, 5.0, 4.0, &[0], &[4], 20).unwrap();
        assert!((g.value + 4.0 * 0.7f64.ln()).abs() < 1e-12, "{g:?}");
        assert_eq!(g.argmax_n, Some(4));
        // brute force over every n <= 20
        let t = hitting_prob_table(&env, &[0], 20).unwrap();
        let brute = (0..=20).map(|n| -5.0 * (n as f64 - 4.0).abs() + t.prob(n, &[4]).ln()).fold(f64::NEG_INFINITY, f64::max);
        assert!((g.value + brute).abs() < 1e-12);
        let far = g_u(&env, 1.0, 0.0, &[0], &[30], 10).unwrap();
        assert!(far.is_infinite());
    }

    #[test]
    fn log_domain_agrees_with_linear() {
        let env = homogeneous(1, vec![0.7, 0.3], 400);
        let lin = g_u(&env, 2.0, 40.0, &[0], &[20], 200).unwrap();
        let log = g_u(&env, 2.0, 40.0, &[0], &[20], 400).unwrap();
        assert!((lin.value - log.value).abs() < 1e-10);
        // deep tail that underflows plain probabilities
        let deep = g_u(&env, 8.0, 1200.0, &[0], &[1200], 1300).unwrap();
        assert!((deep.value - 1200.0 * (1.0f64 / 0.7).ln()).abs() < 1e-8);
    }

    #[test]
    fn monotone_in_u() {
        let env = homogeneous(1, vec![0.6, 0.4], 100);
        let mut prev = 0.0;
        for u in U_LADDER {
            let g = g_u(&env, u, 30.0, &[0], &[4], 120).unwrap();
            assert!(g.value >= prev - 1e-12);
            prev = g.value;
        }
    }

    #[test]
    fn bad_arguments() {
        let env = homogeneous(1, vec![0.5, 0.5], 5);
        assert!(g_u(&env, 0.0, 1.0, &[0], &[1], 5).is_err());
        assert!(g_u(&env, 1.0, -1.0, &[0], &[1], 5).is_err());
    }

    #[test]
    fn target_parity() {
        assert_eq!(target_site(&[0.4], 200), vec![80]);
        let y = target_site(&[0.5, 0.5], 3);
        assert_eq!(l1_norm(&y), 3);
        assert!((y[0] - 1).abs() + (y[1] - 1).abs() == 1 && y.iter().all(|&c| c == 1 || c == 2));
        let y = target_site(&[0.33], 7);
        assert_eq!((y[0] - 7).rem_euclid(2), 0);
        assert_eq!(target_site(&[1.0], 9), vec![9]);
        assert_eq!(target_site(&[-1.0, 0.0], 4), vec![-4, 0]);
    }

    #[test]
    fn properties_on_srw() {
        let env = homogeneous(1, vec![0.5, 0.5], 60).with_policy(BoundaryPolicy::Periodic, None).unwrap();
        let r = check_g_properties(&env, 1.0, 0.5, 60, 8, 4, 40, 1).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.skipped < r.tuples);
    }

    #[test]
    fn iq_zero_disorder_oracles() {
        let law = make_iid_law::<f64>(1, 0.1, SiteKernel::one_dim(0.7).unwrap(), MarginalFamily::two_point(), 0.0).unwrap();
        let at_drift = estimate_iq(&law, &[0.4], &[8.0], &[200], 1, 0).unwrap();
        assert!(at_drift.extrapolated <= 0.05);
        let edge = estimate_iq(&law, &[1.0], &[8.0], &[200], 1, 0).unwrap();
        assert!((edge.extrapolated - (1.0f64 / 0.7).ln()).abs() < 0.02);
        let srw = make_iid_law::<f64>(1, 0.1, SiteKernel::uniform(1), MarginalFamily::two_point(), 0.0).unwrap();
        let zero = estimate_iq(&srw, &[0.0], &U_LADDER, &[50, 200], 1, 0).unwrap();
        assert!(zero.extrapolated <= 0.05);
        // values nondecreasing in u at fixed N
        for n in [50, 200] {
            let means: Vec<f64> = U_LADDER.iter().map(|&u| zero.entry(u, n).unwrap().mean).collect();
            assert!(means.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        }
    }
}
