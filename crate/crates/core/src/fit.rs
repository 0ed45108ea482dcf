//! Frequency increment test.
//!
//! Under neutral Wright-Fisher drift the rescaled increments
//!
//! ```text
//! Y_i = (x_i - x_{i-1}) / sqrt(2 x_{i-1} (1 - x_{i-1}) (t_i - t_{i-1}))
//! ```
//!
//! are approximately independent with mean zero, so a one-sample t test on
//! `Y` asks whether the series drifts or is pushed. Frequencies of exactly 0
//! or 1 in a bin of `n` tokens are replaced by `1/(2n)` and `1 - 1/(2n)`
//! first, since the denominator vanishes there.
//!
//! Short corpus series give few increments, so the report also carries the
//! post-hoc power of the test at the observed effect size. A verdict of
//! selection is only issued when that power reaches 0.8.

use std::fmt::{self, Write as _};

use crate::binning::BinnedSeries;
use crate::error::{Error, Result};
use crate::stats;

pub const FIT_HEADER: &str = "verb\tk\tt_stat\tp_value\tcohens_d\tpower\tverdict";
/// Power below which a test result is not acted on.
pub const POWER_GATE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitVerdict {
    Selection,
    DriftNotRejected,
    Underpowered,
    Undefined,
}

impl fmt::Display for FitVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitVerdict::Selection => "SELECTION",
            FitVerdict::DriftNotRejected => "DRIFT_NOT_REJECTED",
            FitVerdict::Underpowered => "UNDERPOWERED",
            FitVerdict::Undefined => "UNDEFINED",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub verb: String,
    pub increments: Vec<f64>,
    /// NaN when the increments have zero variance.
    pub t_stat: f64,
    pub p_value: f64,
    pub dof: usize,
    pub cohens_d: f64,
    pub power: f64,
    pub alpha: f64,
    pub verdict: FitVerdict,
}

impl FitReport {
    /// Number of increments.
    pub fn k(&self) -> usize {
        self.increments.len()
    }

    pub fn tsv_row(&self) -> String {
        fn num(x: f64) -> String {
            if x.is_nan() {
                "NA".to_string()
            } else {
                format!("{x:.6}")
            }
        }
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.verb,
            self.k(),
            num(self.t_stat),
            num(self.p_value),
            num(self.cohens_d),
            num(self.power),
            self.verdict
        )
    }
}

pub fn reports_to_tsv(reports: &[FitReport]) -> String {
    let mut out = String::from(FIT_HEADER);
    out.push('\n');
    for r in reports {
        writeln!(out, "{}", r.tsv_row()).unwrap();
    }
    out
}

/// Frequencies after boundary correction.
pub fn corrected_freqs(series: &BinnedSeries) -> Vec<f64> {
    series
        .freq_have
        .iter()
        .zip(&series.bin_sizes)
        .map(|(&x, &n)| {
            let eps = 1.0 / (2.0 * n.max(1) as f64);
            if x <= 0.0 {
                eps
            } else if x >= 1.0 {
                1.0 - eps
            } else {
                x
            }
        })
        .collect()
}

pub fn rescaled_increments(series: &BinnedSeries) -> Result<Vec<f64>> {
    if series.len() < 3 {
        return Err(Error::SeriesTooSmall(format!(
            "`{}` has {} bins, the increment test needs at least 3",
            series.verb,
            series.len()
        )));
    }
    let x = corrected_freqs(series);
    let t = &series.times;
    (1..x.len())
        .map(|i| {
            let dt = t[i] - t[i - 1];
            if !(dt > 0.0) {
                return Err(Error::DegenerateSeries(format!(
                    "`{}` bins {} and {} share time {}",
                    series.verb,
                    i - 1,
                    i,
                    t[i]
                )));
            }
            Ok((x[i] - x[i - 1]) / (2.0 * x[i - 1] * (1.0 - x[i - 1]) * dt).sqrt())
        })
        .collect()
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Cohen's d of the increments and the power of a two-sided one-sample t
/// test at level `alpha` with that effect and sample size.
pub fn post_hoc_power(increments: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if increments.len() < 2 {
        return Err(Error::SeriesTooSmall("power analysis needs at least 2 increments".into()));
    }
    check_alpha(alpha)?;
    let (mean, sd) = mean_sd(increments);
    if !(sd > 0.0) {
        return Err(Error::UndefinedPower);
    }
    let d = mean.abs() / sd;
    Ok((d, stats::one_sample_t_power(d, increments.len(), alpha)))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

pub fn fit_test(series: &BinnedSeries, alpha: f64) -> Result<FitReport> {
    check_alpha(alpha)?;
    let increments = rescaled_increments(series)?;
    let k = increments.len();
    let (mean, sd) = mean_sd(&increments);
    let mut report = FitReport {
        verb: series.verb.clone(),
        increments,
        t_stat: f64::NAN,
        p_value: f64::NAN,
        dof: k - 1,
        cohens_d: f64::NAN,
        power: f64::NAN,
        alpha,
        verdict: FitVerdict::Undefined,
    };
    if !(sd > 0.0) {
        return Ok(report);
    }
    let t = mean / (sd / (k as f64).sqrt());
    report.t_stat = t;
    report.p_value = stats::t_two_sided_p(t, (k - 1) as f64);
    let (d, power) = post_hoc_power(&report.increments, alpha)?;
    report.cohens_d = d;
    report.power = power;
    report.verdict = if power < POWER_GATE {
        FitVerdict::Underpowered
    } else if report.p_value < alpha {
        FitVerdict::Selection
    } else {
        FitVerdict::DriftNotRejected
    };
    Ok(report)
}
