//! Fixed-order Monte-Carlo reductions and the log-log rate fit.

use crate::error::{Error, Result};
use crate::quadrature::compensated_sum;

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub const ZERO: Estimate = Estimate {
        mean: 0.0,
        stderr: 0.0,
    };

    /// Sample mean and standard error of the mean. Summation is compensated and
    /// in slice order, so the result does not depend on how samples were produced.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let mean = compensated_sum(samples.iter().copied()) / n as f64;
        if n == 1 {
            return Self { mean, stderr: 0.0 };
        }
        let ss = compensated_sum(samples.iter().map(|x| (x - mean) * (x - mean)));
        let var = ss / (n as f64 - 1.0);
        Self {
            mean,
            stderr: (var / n as f64).sqrt(),
        }
    }

    /// Frequency estimate of a Bernoulli event with binomial standard error.
    pub fn from_indicator(hits: usize, n: usize) -> Self {
        let p = hits as f64 / n as f64;
        Self {
            mean: p,
            stderr: (p * (1.0 - p) / n as f64).sqrt(),
        }
    }

    pub fn within(&self, target: f64, n_stderr: f64) -> bool {
        (self.mean - target).abs() <= n_stderr * self.stderr
    }
}

/// Unbiased sample variance together with its asymptotic standard error,
/// estimated from the fourth central moment.
pub fn variance_with_stderr(samples: &[f64]) -> Estimate {
    let n = samples.len() as f64;
    let mean = compensated_sum(samples.iter().copied()) / n;
    let m2 = compensated_sum(samples.iter().map(|x| (x - mean).powi(2))) / n;
    let m4 = compensated_sum(samples.iter().map(|x| (x - mean).powi(4))) / n;
    Estimate {
        mean: m2 * n / (n - 1.0),
        stderr: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
    }
}

/// Ordinary least-squares line through (x, y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 3 {
        return Err(Error::FitTooFewPoints(n));
    }
    let nf = n as f64;
    let mx = compensated_sum(x.iter().copied()) / nf;
    let my = compensated_sum(y.iter().copied()) / nf;
    let sxy = compensated_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = compensated_sum(x.iter().map(|a| (a - mx) * (a - mx)));
    if sxx == 0.0 {
        return Err(Error::InvalidParameter(
            "rate fit needs at least two distinct abscissae".into(),
        ));
    }
    let slope = sxy / sxx;
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
    })
}

/// Slope of log(y) against log(x); every value must be strictly positive.
pub fn fit_log_log(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let positive = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .count();
    if positive < x.len() || positive < 3 {
        return Err(Error::FitTooFewPoints(positive));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly)
}
