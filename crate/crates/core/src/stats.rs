//! Scalar statistics over sample columns: medians and quantiles, moments
//! with bootstrap intervals, least squares, and the sub-Gaussian tail fit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{NlwError, Result};

/// Bootstrap resamples used by [`moment_estimate`].
pub const BOOTSTRAP_REPS: usize = 200;
const BOOTSTRAP_SEED: u64 = 0x6b6f_6f74_7374_7261;

/// Default quantile window of [`tail_fit`].
pub const DEFAULT_QUANTILES: (f64, f64) = (0.5, 0.995);
/// Abscissas in a tail fit.
pub const TAIL_POINTS: usize = 30;
/// Minimum ensemble size for a tail fit.
pub const MIN_TAIL_SAMPLES: usize = 1000;

fn check_finite(samples: &[f64]) -> Result<()> {
    if samples.is_empty() {
        return Err(NlwError::InsufficientSamples { needed: 1, got: 0 });
    }
    if let Some(v) = samples.iter().find(|v| !v.is_finite()) {
        return Err(NlwError::InvalidArgument(format!("non-finite sample {v}")));
    }
    Ok(())
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Linear interpolation between order statistics (`p` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

pub fn median(samples: &[f64]) -> Result<f64> {
    check_finite(samples)?;
    Ok(quantile_sorted(&sorted(samples), 0.5))
}

/// Standard deviation of `statistic` over `reps` resamples with replacement.
pub fn bootstrap_se(samples: &[f64], reps: usize, seed: u64, statistic: impl Fn(&[f64]) -> f64) -> Result<f64> {
    check_finite(samples)?;
    if reps < 2 {
        return Err(NlwError::InsufficientSamples { needed: 2, got: reps });
    }
    let stats = bootstrap(samples, reps, seed, statistic);
    let mean = stats.iter().sum::<f64>() / reps as f64;
    let var = stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    Ok(var.sqrt())
}

fn bootstrap(samples: &[f64], reps: usize, seed: u64, statistic: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; samples.len()];
    (0..reps)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = samples[rng.gen_range(0..samples.len())];
            }
            statistic(&buf)
        })
        .collect()
}

/// `(mean |X|^p)^{1/p}` with a 95% percentile-bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub p: f64,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub samples: usize,
}

fn moment(samples: &[f64], p: f64) -> f64 {
    // Scale out the maximum so high moments do not overflow.
    let scale = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let mean = samples.iter().map(|v| (v.abs() / scale).powf(p)).sum::<f64>() / samples.len() as f64;
    scale * mean.powf(1.0 / p)
}

pub fn moment_estimate(samples: &[f64], p: f64) -> Result<MomentEstimate> {
    moment_estimate_with(samples, p, BOOTSTRAP_REPS, BOOTSTRAP_SEED)
}

pub fn moment_estimate_with(samples: &[f64], p: f64, reps: usize, seed: u64) -> Result<MomentEstimate> {
    check_finite(samples)?;
    if !(p >= 1.0) || p.is_infinite() {
        return Err(NlwError::InvalidExponent(format!("moment order {p} must be finite and >= 1")));
    }
    let value = moment(samples, p);
    let (ci_low, ci_high) = if reps == 0 {
        (value, value)
    } else {
        let boot = sorted(&bootstrap(samples, reps, seed, |s| moment(s, p)));
        (quantile_sorted(&boot, 0.025), quantile_sorted(&boot, 0.975))
    };
    Ok(MomentEstimate {
        p,
        value,
        ci_low,
        ci_high,
        samples: samples.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y ~ slope x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(NlwError::ShapeMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(NlwError::InsufficientSamples { needed: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(NlwError::DegenerateSamples("all abscissas coincide".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// Regression of `log P(X > lambda)` on `lambda^2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailFit {
    pub quantile_range: (f64, f64),
    /// `lambda` at the quantile levels, ascending.
    pub lambdas: Vec<f64>,
    /// `#{X_i > lambda} / N`.
    pub survival: Vec<f64>,
    pub slope: f64,
    /// Estimate of `log C`.
    pub intercept: f64,
    pub r2: f64,
    pub samples: usize,
}

impl TailFit {
    /// Negative slope and `R^2 >= min_r2`.
    pub fn is_gaussian(&self, min_r2: f64) -> bool {
        self.slope < 0.0 && self.r2 >= min_r2
    }

    /// `(lambda^2, log P)` pairs used in the regression.
    pub fn plot_points(&self) -> Vec<(f64, f64)> {
        self.lambdas.iter().zip(&self.survival).map(|(l, p)| (l * l, p.ln())).collect()
    }
}

/// Fit on [`TAIL_POINTS`] abscissas at equally spaced quantile levels in
/// `range`. Abscissas with zero empirical survival are dropped.
pub fn tail_fit(samples: &[f64], range: (f64, f64)) -> Result<TailFit> {
    check_finite(samples)?;
    if samples.len() < MIN_TAIL_SAMPLES {
        return Err(NlwError::InsufficientSamples {
            needed: MIN_TAIL_SAMPLES,
            got: samples.len(),
        });
    }
    let (lo, hi) = range;
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(NlwError::InvalidArgument(format!("quantile range ({lo}, {hi}) must lie inside (0, 1)")));
    }
    let s = sorted(samples);
    let (min, max) = (s[0], s[s.len() - 1]);
    if max - min <= 1e-12 * max.abs().max(min.abs()).max(f64::MIN_POSITIVE) {
        return Err(NlwError::DegenerateSamples(format!("all {} samples equal {min}", s.len())));
    }
    let n = s.len() as f64;
    let mut lambdas = Vec::with_capacity(TAIL_POINTS);
    let mut survival = Vec::with_capacity(TAIL_POINTS);
    for j in 0..TAIL_POINTS {
        let level = lo + (hi - lo) * j as f64 / (TAIL_POINTS - 1) as f64;
        let lambda = quantile_sorted(&s, level);
        let above = s.len() - s.partition_point(|&v| v <= lambda);
        if above > 0 {
            lambdas.push(lambda);
            survival.push(above as f64 / n);
        }
    }
    let x: Vec<f64> = lambdas.iter().map(|l| l * l).collect();
    let y: Vec<f64> = survival.iter().map(|p| p.ln()).collect();
    let fit = linear_fit(&x, &y).map_err(|_| NlwError::DegenerateSamples("tail quantiles coincide".into()))?;
    Ok(TailFit {
        quantile_range: range,
        lambdas,
        survival,
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        samples: samples.len(),
    })
}
