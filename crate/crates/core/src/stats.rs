//! Small statistics helpers used by the Monte Carlo estimators.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::{Error, Result};

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Mean, sample standard deviation and standard error; reduction is sequential
/// in slice order so results do not depend on how the slice was produced.
pub fn mean_stderr(xs: &[f64]) -> MeanStderr {
    let n = xs.len();
    if n == 0 {
        return MeanStderr { mean: f64::NAN, stderr: f64::NAN, n };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return MeanStderr { mean, stderr: 0.0, n };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    MeanStderr { mean, stderr: (var / n as f64).sqrt(), n }
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

pub fn sample_covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return 0.0;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1) as f64
}

/// Ratio of means `mean(num) / mean(den)` with a delta-method standard error.
pub fn ratio_estimate(num: &[f64], den: &[f64]) -> Result<(f64, f64)> {
    let n = num.len();
    if n == 0 || den.len() != n {
        return Err(Error::EmptyRun);
    }
    let a = num.iter().sum::<f64>() / n as f64;
    let b = den.iter().sum::<f64>() / n as f64;
    if !(b > 0.0) {
        return Err(Error::DegenerateDenominator);
    }
    let r = a / b;
    let var = (sample_variance(num) - 2.0 * r * sample_covariance(num, den)
        + r * r * sample_variance(den))
        / (b * b);
    Ok((r, (var.max(0.0) / n as f64).sqrt()))
}

/// Pearson chi-square goodness of fit; returns `(statistic, p_value)`.
/// Cells with zero expected count must have zero observed count.
pub fn chi_square_gof(observed: &[u64], expected_probs: &[f64]) -> (f64, f64) {
    let total: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&o, &p) in observed.iter().zip(expected_probs) {
        let e = p * total as f64;
        if e > 0.0 {
            stat += (o as f64 - e).powi(2) / e;
            cells += 1;
        } else if o > 0 {
            return (f64::INFINITY, 0.0);
        }
    }
    if cells < 2 {
        return (stat, 1.0);
    }
    let dist = ChiSquared::new((cells - 1) as f64).expect("positive dof");
    (stat, 1.0 - dist.cdf(stat))
}
