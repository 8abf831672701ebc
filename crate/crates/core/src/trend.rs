//! Exponential growth of the yearly mean revenue and profit.
//!
//! Fits are linear least squares on `ln(value)` against `(year - y0)`, which
//! treats deviations as multiplicative noise.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::YearlyMean;
use crate::stats::{ols_line, LineFit};

/// `value(year) = amplitude * exp((year - y0) / efold_years)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub amplitude: f64,
    /// e-folding time in years.
    pub efold_years: f64,
    pub y0: i32,
    pub excluded_years: BTreeSet<i32>,
    /// RMS of `ln(value) - ln(fit)` over the years used in the fit.
    pub residual_rms: f64,
}

impl TrendFit {
    pub fn value_at(&self, year: i32) -> f64 {
        self.amplitude * ((year - self.y0) as f64 / self.efold_years).exp()
    }

    pub fn log_residual(&self, year: i32, value: f64) -> f64 {
        value.ln() - self.value_at(year).ln()
    }

    /// Same trend referred to another base year.
    pub fn rebased(&self, y0: i32) -> TrendFit {
        TrendFit {
            amplitude: self.value_at(y0),
            y0,
            ..self.clone()
        }
    }
}

fn usable<'a>(
    series: &'a [(i32, f64)],
    excluded: &'a BTreeSet<i32>,
) -> impl Iterator<Item = &'a (i32, f64)> {
    series.iter().filter(move |(y, _)| !excluded.contains(y))
}

fn check_points(series: &[(i32, f64)], excluded: &BTreeSet<i32>) -> Result<usize> {
    let mut n = 0;
    for &(year, v) in usable(series, excluded) {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::domain(format!(
                "value {v} in year {year} is not positive; logarithm undefined"
            )));
        }
        n += 1;
    }
    if n < 2 {
        return Err(Error::InsufficientData {
            what: "exponential fit points",
            needed: 2,
            got: n,
        });
    }
    Ok(n)
}

fn rms_log_residual(series: &[(i32, f64)], excluded: &BTreeSet<i32>, fit: &TrendFit) -> f64 {
    let (mut ss, mut n) = (0.0, 0usize);
    for &(y, v) in usable(series, excluded) {
        let e = fit.log_residual(y, v);
        ss += e * e;
        n += 1;
    }
    (ss / n as f64).sqrt()
}

/// Least-squares fit of `ln(value) = ln(A) + (year - y0) / B` over the years
/// not in `excluded`.
pub fn fit_exponential(
    series: &[(i32, f64)],
    y0: i32,
    excluded: &BTreeSet<i32>,
) -> Result<TrendFit> {
    check_points(series, excluded)?;
    let (x, y): (Vec<f64>, Vec<f64>) = usable(series, excluded)
        .map(|&(yr, v)| ((yr - y0) as f64, v.ln()))
        .unzip();
    let LineFit {
        slope, intercept, ..
    } = ols_line(&x, &y)
        .ok_or_else(|| Error::SingularDesign("all fit points share one year".into()))?;
    let scale = y.iter().map(|v| v.abs()).fold(1.0, f64::max);
    if slope.abs() <= 1e-12 * scale {
        return Err(Error::DegenerateFlat);
    }
    if slope < 0.0 {
        return Err(Error::domain(format!(
            "series decays (rate {slope:.3e}/yr); a positive growth time is required"
        )));
    }
    let mut fit = TrendFit {
        amplitude: intercept.exp(),
        efold_years: 1.0 / slope,
        y0,
        excluded_years: excluded.clone(),
        residual_rms: 0.0,
    };
    fit.residual_rms = rms_log_residual(series, excluded, &fit);
    Ok(fit)
}

/// Amplitude-only fit with the e-folding time held at `efold_years`; used to
/// make the profit trend exactly proportional to the revenue trend.
pub fn fit_exponential_fixed_rate(
    series: &[(i32, f64)],
    y0: i32,
    efold_years: f64,
    excluded: &BTreeSet<i32>,
) -> Result<TrendFit> {
    if !(efold_years > 0.0) {
        return Err(Error::domain("fixed e-folding time must be positive"));
    }
    let n = check_points(series, excluded)?;
    let ln_a = usable(series, excluded)
        .map(|&(yr, v)| v.ln() - (yr - y0) as f64 / efold_years)
        .sum::<f64>()
        / n as f64;
    let mut fit = TrendFit {
        amplitude: ln_a.exp(),
        efold_years,
        y0,
        excluded_years: excluded.clone(),
        residual_rms: 0.0,
    };
    fit.residual_rms = rms_log_residual(series, excluded, &fit);
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionalityFit {
    /// OLS slope of `P0` on `R0`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `sum(P0 R0) / sum(R0^2)`: the mean growth factor candidate.
    pub slope_through_origin: f64,
}

/// Regression of yearly mean profit on yearly mean revenue.
pub fn fit_proportionality(
    means: &[YearlyMean],
    excluded: &BTreeSet<i32>,
) -> Result<ProportionalityFit> {
    let pts: Vec<&YearlyMean> = means.iter().filter(|m| !excluded.contains(&m.year)).collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData {
            what: "proportionality fit points",
            needed: 2,
            got: pts.len(),
        });
    }
    let x: Vec<f64> = pts.iter().map(|m| m.r0).collect();
    let y: Vec<f64> = pts.iter().map(|m| m.p0).collect();
    let line =
        ols_line(&x, &y).ok_or_else(|| Error::SingularDesign("all R0 values are equal".into()))?;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    Ok(ProportionalityFit {
        slope: line.slope,
        intercept: line.intercept,
        r_squared: line.r_squared,
        slope_through_origin: sxy / sxx,
    })
}

/// Years whose absolute log residual against `trend` exceeds `threshold`
/// times the RMS residual of the remaining years, iterated until the flagged
/// set stops growing. Residuals below `1e-9` are never flagged.
pub fn flag_anomalous(series: &[(i32, f64)], trend: &TrendFit, threshold: f64) -> BTreeSet<i32> {
    const FLOOR: f64 = 1e-9;
    let resid: Vec<(i32, f64)> = series
        .iter()
        .filter(|(_, v)| *v > 0.0)
        .map(|&(y, v)| (y, trend.log_residual(y, v).abs()))
        .collect();
    // nonpositive values have no log residual; they are anomalous by construction
    let mut flagged: BTreeSet<i32> = series
        .iter()
        .filter(|(_, v)| !(*v > 0.0))
        .map(|(y, _)| *y)
        .collect();
    loop {
        let kept: Vec<f64> = resid
            .iter()
            .filter(|(y, _)| !flagged.contains(y))
            .map(|(_, e)| *e)
            .collect();
        if kept.is_empty() {
            return flagged;
        }
        let rms = (kept.iter().map(|e| e * e).sum::<f64>() / kept.len() as f64).sqrt();
        let cut = (threshold * rms).max(FLOOR);
        let next: BTreeSet<i32> = flagged
            .iter()
            .copied()
            .chain(resid.iter().filter(|(_, e)| *e > cut).map(|(y, _)| *y))
            .collect();
        if next.len() == flagged.len() {
            return flagged;
        }
        flagged = next;
    }
}

/// Convenience: `(year, R0)` and `(year, P0)` series from yearly means.
pub fn revenue_series(means: &[YearlyMean]) -> Vec<(i32, f64)> {
    means.iter().map(|m| (m.year, m.r0)).collect()
}

pub fn profit_series(means: &[YearlyMean]) -> Vec<(i32, f64)> {
    means.iter().map(|m| (m.year, m.p0)).collect()
}
