//! Local truncation error statistics.
//!
//! One-step errors are measured from an exact window: `error = w - u`, the
//! model's prediction minus the exact next state. Over many independently
//! trained models (or bootstrap ensembles of them) these errors are reduced
//! to a per-component bias, variance and mean squared error, with
//! `mse = variance + bias^2` under the biased (`1/n`) variance convention.
//!
//! The chi-square goodness-of-fit test compares errors with the Gaussian law
//! implied by their bias and variance, using equal-probability bins.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::net::MemoryWindow;
use crate::numeric::{compensated_sum, mean};
use crate::predict::{average_states, Stepper};
use crate::training::Ensemble;
use crate::{Error, Result};

/// One-step prediction minus exact next state, per observed component.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSample {
    pub values: Vec<f64>,
}

pub fn one_step_errors<S: Stepper>(
    models: &[S],
    exact_window: &MemoryWindow,
    exact_next: &[f64],
) -> Result<Vec<ErrorSample>> {
    models
        .iter()
        .map(|m| {
            if exact_next.len() != m.arch().state_dim() {
                return Err(Error::dim(
                    "exact next state",
                    m.arch().state_dim(),
                    exact_next.len(),
                ));
            }
            let w = m.step(exact_window)?;
            Ok(ErrorSample {
                values: w.iter().zip(exact_next).map(|(a, b)| a - b).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceConvention {
    /// Divide by `n`. `mse = variance + bias^2` holds exactly.
    BiasedN,
    /// Divide by `n - 1`.
    #[default]
    UnbiasedNMinus1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LteStats {
    /// Mean error per component.
    pub bias: Vec<f64>,
    pub variance: Vec<f64>,
    /// Mean squared error per component.
    pub mse: Vec<f64>,
    pub n_samples: usize,
    pub variance_convention: VarianceConvention,
}

pub fn bias_variance_mse(
    samples: &[ErrorSample],
    convention: VarianceConvention,
) -> Result<LteStats> {
    if samples.len() < 2 {
        return Err(Error::NotEnoughSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let d = samples[0].values.len();
    if let Some(bad) = samples.iter().find(|s| s.values.len() != d) {
        return Err(Error::dim("error sample", d, bad.values.len()));
    }
    let n = samples.len() as f64;
    let denom = match convention {
        VarianceConvention::BiasedN => n,
        VarianceConvention::UnbiasedNMinus1 => n - 1.0,
    };
    let mut stats = LteStats {
        bias: Vec::with_capacity(d),
        variance: Vec::with_capacity(d),
        mse: Vec::with_capacity(d),
        n_samples: samples.len(),
        variance_convention: convention,
    };
    for c in 0..d {
        let column: Vec<f64> = samples.iter().map(|s| s.values[c]).collect();
        let m = mean(&column);
        let ss = compensated_sum(column.iter().map(|x| (x - m) * (x - m)));
        stats.bias.push(m);
        stats.variance.push(ss / denom);
        stats
            .mse
            .push(compensated_sum(column.iter().map(|x| x * x)) / n);
    }
    Ok(stats)
}

/// `n_ensembles` index lists of length `k`, drawn uniformly with replacement
/// from `0..pool_size`.
pub fn bootstrap_indices(
    pool_size: usize,
    k: usize,
    n_ensembles: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<usize>> {
    assert!(pool_size > 0, "pool must be non-empty");
    (0..n_ensembles)
        .map(|_| (0..k).map(|_| rng.random_range(0..pool_size)).collect())
        .collect()
}

pub fn bootstrap_ensembles(
    pool: &Ensemble,
    k: usize,
    n_ensembles: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Ensemble>> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "ensemble size must be at least 1".into(),
        ));
    }
    bootstrap_indices(pool.k(), k, n_ensembles, rng)
        .iter()
        .map(|idx| pool.select(idx))
        .collect()
}

/// Statistics of one ensemble size.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub k: usize,
    pub stats: LteStats,
    pub errors: Vec<ErrorSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
}

impl ScalingReport {
    pub fn row(&self, k: usize) -> Option<&ScalingRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    /// CSV with header `K,component,bias,variance,mse,n`, one row per (K, component).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["K", "component", "bias", "variance", "mse", "n"])?;
        for row in &self.rows {
            for c in 0..row.stats.bias.len() {
                w.write_record([
                    row.k.to_string(),
                    component_name(c),
                    row.stats.bias[c].to_string(),
                    row.stats.variance[c].to_string(),
                    row.stats.mse[c].to_string(),
                    row.stats.n_samples.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<report csv>", e))?;
        Ok(())
    }
}

pub fn component_name(c: usize) -> String {
    format!("x{}", c + 1)
}

/// One-step error statistics for each ensemble size in `k_list`.
///
/// `K = 1` uses every pool member once; larger `K` use `n_ensembles`
/// bootstrap ensembles drawn from the pool. Member predictions are computed
/// once and averaged per ensemble exactly as [`crate::ensemble_step`] does.
pub fn variance_scaling_report(
    pool: &Ensemble,
    k_list: &[usize],
    exact_window: &MemoryWindow,
    exact_next: &[f64],
    n_ensembles: usize,
    rng: &mut impl Rng,
    convention: VarianceConvention,
) -> Result<ScalingReport> {
    let arch = pool.arch();
    arch.check_window(exact_window)?;
    if exact_next.len() != arch.state_dim() {
        return Err(Error::dim(
            "exact next state",
            arch.state_dim(),
            exact_next.len(),
        ));
    }
    let predictions = crate::predict::ensemble_step(pool, exact_window)?.members;
    let error_of = |w: &[f64]| ErrorSample {
        values: w.iter().zip(exact_next).map(|(a, b)| a - b).collect(),
    };
    let mut rows = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let errors: Vec<ErrorSample> = match k {
            0 => {
                return Err(Error::InvalidArgument(
                    "ensemble size must be at least 1".into(),
                ))
            }
            1 => predictions.iter().map(|w| error_of(w)).collect(),
            _ => bootstrap_indices(pool.k(), k, n_ensembles, rng)
                .iter()
                .map(|idx| {
                    let chosen: Vec<Vec<f64>> =
                        idx.iter().map(|&i| predictions[i].clone()).collect();
                    error_of(&average_states(&chosen))
                })
                .collect(),
        };
        rows.push(ScalingRow {
            k,
            stats: bias_variance_mse(&errors, convention)?,
            errors,
        });
    }
    Ok(ScalingReport { rows })
}

/// Outcome of [`chi2_gof_gaussian`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub statistic: f64,
    pub dof: usize,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub n_bins: usize,
    pub alpha: f64,
}

/// Bin count used when none is given: `max(8, n / 50)`, capped at 30.
pub fn default_bins(n: usize) -> usize {
    (n / 50).clamp(8, 30)
}

/// Chi-square test of `samples` against `N(mean, variance)` with
/// `n_bins` equal-probability bins. The Gaussian parameters are taken as
/// given, so the test has `n_bins - 1` degrees of freedom.
pub fn chi2_gof_gaussian(
    samples: &[f64],
    mean: f64,
    variance: f64,
    alpha: f64,
    n_bins: usize,
) -> Result<GofResult> {
    if samples.is_empty() {
        return Err(Error::NotEnoughSamples { needed: 1, got: 0 });
    }
    if !(variance > 0.0 && variance.is_finite()) || !mean.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need finite mean and positive variance, got mean {mean}, variance {variance}"
        )));
    }
    if n_bins < 2 {
        return Err(Error::InvalidArgument("need at least two bins".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    let sd = variance.sqrt();
    let std_normal = Normal::standard();
    let mut counts = vec![0usize; n_bins];
    for &x in samples {
        let u = std_normal.cdf((x - mean) / sd);
        let bin = ((u * n_bins as f64) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    let expected = samples.len() as f64 / n_bins as f64;
    let statistic = compensated_sum(counts.iter().map(|&o| {
        let diff = o as f64 - expected;
        diff * diff / expected
    }));
    let dof = n_bins - 1;
    let p_value = chi2_sf(statistic, dof);
    let critical_value = chi2_critical_value(alpha, dof);
    Ok(GofResult {
        statistic,
        dof,
        critical_value,
        p_value,
        reject: p_value < alpha,
        n_bins,
        alpha,
    })
}

/// Series converges quickly for `x < a + 1`.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Modified Lentz continued fraction for `Q(a, x)`, used for `x >= a + 1`.
fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "shape must be positive");
    if x <= 0.0 {
        0.0
    } else if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_continued_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "shape must be positive");
    if x <= 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

/// CDF of the chi-square distribution with `dof` degrees of freedom.
pub fn chi2_cdf(x: f64, dof: usize) -> f64 {
    assert!(dof >= 1, "dof must be at least 1");
    regularized_gamma_p(dof as f64 / 2.0, x / 2.0).clamp(0.0, 1.0)
}

/// Survival function `1 - chi2_cdf(x, dof)`, accurate in the upper tail.
pub fn chi2_sf(x: f64, dof: usize) -> f64 {
    assert!(dof >= 1, "dof must be at least 1");
    regularized_gamma_q(dof as f64 / 2.0, x / 2.0).clamp(0.0, 1.0)
}

/// `x` with `chi2_sf(x, dof) = alpha`, by bisection.
pub fn chi2_critical_value(alpha: f64, dof: usize) -> f64 {
    let mut lo = 0.0;
    let mut hi = dof as f64 + 10.0;
    while chi2_sf(hi, dof) > alpha {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_sf(mid, dof) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// GOF summary written to `gof.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofRecord {
    pub component: String,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub reject: bool,
}

impl GofRecord {
    pub fn new(component: usize, result: &GofResult) -> Self {
        Self {
            component: component_name(component),
            statistic: result.statistic,
            dof: result.dof,
            p_value: result.p_value,
            reject: result.reject,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
    pub gaussian_pdf_at_center: f64,
}

/// Equal-width histogram over the sample range, paired with the
/// `N(mean, variance)` density at each bin center.
pub fn histogram(
    samples: &[f64],
    n_bins: usize,
    mean: f64,
    variance: f64,
) -> Result<Vec<HistogramBin>> {
    if samples.is_empty() || n_bins == 0 {
        return Err(Error::NotEnoughSamples {
            needed: 1,
            got: samples.len(),
        });
    }
    let normal = Normal::new(mean, variance.sqrt())
        .map_err(|e| Error::InvalidArgument(format!("invalid Gaussian: {e}")))?;
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &x in samples {
        let b = (((x - lo) / width) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| {
            let left = lo + b as f64 * width;
            let right = lo + (b + 1) as f64 * width;
            HistogramBin {
                left,
                right,
                count,
                gaussian_pdf_at_center: normal.pdf(0.5 * (left + right)),
            }
        })
        .collect())
}

/// CSV with header `bin_left,bin_right,count,gaussian_pdf_at_center`.
pub fn write_histogram_csv<W: Write>(out: W, bins: &[HistogramBin]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_left", "bin_right", "count", "gaussian_pdf_at_center"])?;
    for b in bins {
        w.write_record([
            b.left.to_string(),
            b.right.to_string(),
            b.count.to_string(),
            b.gaussian_pdf_at_center.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<histogram csv>", e))?;
    Ok(())
}
