//! Break-even threshold and probability of profitability.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{empirical_pdf, Binning, FluctuationDensity, GaussianDensity};
use crate::error::{Error, Result};
use crate::quad::QuadConfig;
use crate::scaling::ScaledSeries;
use crate::stats::normal_cdf;

pub const DEFAULT_EPS_CUT: f64 = 10.0;
const NORMALIZATION_TOLERANCE: f64 = 1e-6;

fn quad_cfg() -> QuadConfig {
    QuadConfig {
        abs_tol: 1e-10,
        rel_tol: 1e-10,
        max_intervals: 4000,
    }
}

/// How the density is handled above `eps_cut`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TailMode {
    /// Mass above the cutoff is added in closed form, integrating to infinity.
    #[default]
    Analytic,
    /// The integral stops at the cutoff.
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitabilityModel {
    pub gamma_g: f64,
    pub mean_abs_dpi: f64,
    pub alpha: f64,
    pub density: FluctuationDensity,
    pub eps_cut: f64,
}

impl ProfitabilityModel {
    pub fn new(
        gamma_g: f64,
        mean_abs_dpi: f64,
        alpha: f64,
        density: FluctuationDensity,
        eps_cut: f64,
    ) -> Result<Self> {
        if !gamma_g.is_finite() {
            return Err(Error::domain("gamma_g must be finite"));
        }
        if !(mean_abs_dpi > 0.0 && mean_abs_dpi.is_finite()) {
            return Err(Error::domain(format!("mean_abs_dpi must be positive, got {mean_abs_dpi}")));
        }
        if !(alpha > 1.0) {
            return Err(Error::domain(format!("alpha must exceed 1, got {alpha}")));
        }
        if !(eps_cut > 0.0) {
            return Err(Error::domain(format!("eps_cut must be positive, got {eps_cut}")));
        }
        let model = Self {
            gamma_g,
            mean_abs_dpi,
            alpha,
            density,
            eps_cut,
        };
        let total = model.density.mass_between(-eps_cut, eps_cut, &quad_cfg())?
            + model.density.upper_tail(eps_cut)?
            + model.density.lower_tail(eps_cut)?;
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::domain(format!("density mass is {total}, not 1")));
        }
        Ok(model)
    }

    /// Normal-noise model on the `eta = 1/2` track: the threshold is
    /// `gamma_g r^(1/2)` in raw fluctuation units with standard deviation `sigma`.
    pub fn gaussian(gamma_g: f64, sigma: f64, eps_cut: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
        }
        Self::new(
            gamma_g,
            1.0,
            2.0,
            FluctuationDensity::Gaussian(GaussianDensity { sigma }),
            eps_cut,
        )
    }

    /// `(gamma_g / mean_abs_dpi) r^(1 - 1/alpha)` for `r >= 0`.
    pub fn eps_be(&self, r: f64) -> f64 {
        self.gamma_g / self.mean_abs_dpi * r.powf(1.0 - 1.0 / self.alpha)
    }

    pub fn p_pf(&self, r: f64) -> Result<f64> {
        self.p_pf_with(r, TailMode::Analytic)
    }

    /// Mass of the density above `-eps_be(r)`.
    pub fn p_pf_with(&self, r: f64, mode: TailMode) -> Result<f64> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::domain(format!("scaled revenue must be nonnegative, got {r}")));
        }
        Ok(self.mass_above(-self.eps_be(r), mode)?.clamp(0.0, 1.0))
    }

    fn mass_above(&self, lower: f64, mode: TailMode) -> Result<f64> {
        let b = self.eps_cut;
        let d = &self.density;
        let cfg = quad_cfg();
        match mode {
            TailMode::Truncated => d.mass_between(lower, b, &cfg),
            TailMode::Analytic if lower >= b => d.upper_tail(lower),
            TailMode::Analytic if lower >= -b => {
                Ok(d.mass_between(lower, b, &cfg)? + d.upper_tail(b)?)
            }
            TailMode::Analytic => Ok(d.mass_between(-b, b, &cfg)?
                + d.upper_tail(b)?
                + (d.lower_tail(b)? - d.lower_tail(-lower)?)),
        }
    }

    /// `p_pf` over a grid, evaluated in parallel.
    pub fn p_pf_curve(&self, rs: &[f64], mode: TailMode) -> Result<Vec<f64>> {
        rs.par_iter().map(|&r| self.p_pf_with(r, mode)).collect()
    }
}

/// `Phi(gamma_g sqrt(r) / sigma)`.
pub fn p_pf_gaussian(gamma_g: f64, sigma: f64, r: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    if !(r >= 0.0) {
        return Err(Error::domain(format!("scaled revenue must be nonnegative, got {r}")));
    }
    Ok(normal_cdf(gamma_g * r.sqrt() / sigma))
}

pub fn company_gamma(gamma_s: f64, gamma_c: f64) -> f64 {
    gamma_s - gamma_c
}

pub const DEFAULT_PROFITABILITY_BINS: usize = 20;
pub const DEFAULT_MIN_BIN_COUNT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitabilityBin {
    pub r_bin_center: f64,
    pub fraction: f64,
    pub n: usize,
    pub low_count: bool,
}

/// Fraction of entries with positive profit per log-spaced `r` bin.
/// Only occupied bins are returned.
pub fn empirical_profitability(
    scaled: &ScaledSeries,
    n_bins: usize,
    n_min: usize,
) -> Result<Vec<ProfitabilityBin>> {
    let entries: Vec<_> = scaled.entries.iter().filter(|e| e.r > 0.0).collect();
    if entries.is_empty() {
        return Err(Error::InsufficientData {
            what: "entries with positive r",
            needed: 1,
            got: 0,
        });
    }
    let rs: Vec<f64> = entries.iter().map(|e| e.r).collect();
    let layout = empirical_pdf(&rs, Binning::Log, n_bins)?;
    let edges = &layout.bin_edges;
    let mut n = vec![0usize; n_bins];
    let mut profitable = vec![0usize; n_bins];
    for e in &entries {
        let i = edges[1..].partition_point(|&hi| hi < e.r).min(n_bins - 1);
        n[i] += 1;
        if e.p > 0.0 {
            profitable[i] += 1;
        }
    }
    Ok(layout
        .centers()
        .into_iter()
        .zip(n.iter().zip(&profitable))
        .filter(|(_, (&n, _))| n > 0)
        .map(|(c, (&n, &k))| ProfitabilityBin {
            r_bin_center: c,
            fraction: k as f64 / n as f64,
            n,
            low_count: n < n_min,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsolutePoint {
    pub revenue: f64,
    pub p_pf: f64,
    pub linear_approx: f64,
}

/// Probability of profitability against absolute revenue.
///
/// The small-revenue form expands the integral to first order in the
/// threshold, `P(0) + G(0-) eps_be(R / R0)`. `validity_bound` is the largest
/// grid revenue up to which it stays within `LINEAR_TOLERANCE` of the exact curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsolutePrediction {
    pub r0_forecast: f64,
    pub p_pf_at_zero: f64,
    pub density_at_zero: f64,
    pub points: Vec<AbsolutePoint>,
    pub validity_bound: Option<f64>,
}

pub const LINEAR_TOLERANCE: f64 = 0.01;

pub fn predict_absolute(
    model: &ProfitabilityModel,
    r0_forecast: f64,
    revenue_grid: &[f64],
) -> Result<AbsolutePrediction> {
    if !(r0_forecast > 0.0 && r0_forecast.is_finite()) {
        return Err(Error::domain(format!("R0 forecast must be positive, got {r0_forecast}")));
    }
    let p0 = model.p_pf(0.0)?;
    let g0 = model.density.density_at_zero_left();
    let rs: Vec<f64> = revenue_grid.iter().map(|&big_r| big_r / r0_forecast).collect();
    let exact = model.p_pf_curve(&rs, TailMode::Analytic)?;
    let points: Vec<AbsolutePoint> = revenue_grid
        .iter()
        .zip(rs.iter().zip(exact))
        .map(|(&revenue, (&r, p_pf))| AbsolutePoint {
            revenue,
            p_pf,
            linear_approx: p0 + g0 * model.eps_be(r),
        })
        .collect();
    let mut order: Vec<&AbsolutePoint> = points.iter().collect();
    order.sort_by(|a, b| a.revenue.total_cmp(&b.revenue));
    let validity_bound = order
        .iter()
        .take_while(|p| (p.linear_approx - p.p_pf).abs() <= LINEAR_TOLERANCE)
        .last()
        .map(|p| p.revenue);
    Ok(AbsolutePrediction {
        r0_forecast,
        p_pf_at_zero: p0,
        density_at_zero: g0,
        points,
        validity_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{NormalizedTailDensity, TailFit};
    use crate::scaling::FluctuationEntry;
    use proptest::prelude::*;

    fn reference_density() -> FluctuationDensity {
        FluctuationDensity::PowerTail(
            NormalizedTailDensity::new(TailFit::from_params(0.55, 0.6, 0.9, 0.55, 0.75, 2.7))
                .unwrap(),
        )
    }

    fn symmetric_density() -> FluctuationDensity {
        // no linear term on the negative side makes the two branches mirror images
        FluctuationDensity::PowerTail(
            NormalizedTailDensity::new(TailFit::from_params(0.5, 1e12, 0.8, 0.5, 0.8, 2.7))
                .unwrap(),
        )
    }

    fn reference_model() -> ProfitabilityModel {
        ProfitabilityModel::new(0.052, 0.030, 1.7, reference_density(), DEFAULT_EPS_CUT).unwrap()
    }

    /// Fixed-grid trapezoid of the density from `lo` to a far cutoff, plus
    /// the far tail by trapezoid on doubling intervals.
    fn trapezoid_p_pf(model: &ProfitabilityModel, r: f64, h: f64) -> f64 {
        let f = |e: f64| model.density.pdf(e);
        let lo = -model.eps_be(r);
        let trap = |a: f64, b: f64, n: usize| {
            let step = (b - a) / n as f64;
            let mut s = 0.5 * (f(a) + f(b));
            for i in 1..n {
                s += f(a + step * i as f64);
            }
            s * step
        };
        let mut total = if lo < 0.0 {
            trap(lo, 0.0, ((-lo / h).ceil() as usize).max(1)) + trap(0.0, 50.0, (50.0 / h) as usize)
        } else {
            trap(lo, 50.0, ((50.0 - lo) / h).ceil() as usize)
        };
        let mut x = 50.0;
        while x < 1e7 {
            total += trap(x, 2.0 * x, 4000);
            x *= 2.0;
        }
        total
    }

    #[test]
    fn eps_be_at_unit_revenue() {
        let m = reference_model();
        assert!((m.eps_be(1.0) - 0.052 / 0.030).abs() < 1e-12);
        let neg = ProfitabilityModel::new(-0.052, 0.030, 1.7, reference_density(), 10.0).unwrap();
        assert_eq!(neg.eps_be(3.0), -m.eps_be(3.0));
    }

    #[test]
    fn eps_be_power_scaling() {
        let m = reference_model();
        for (c, r) in [(2.0, 0.3), (10.0, 1.7), (0.1, 5.0)] {
            let lhs = m.eps_be(c * r);
            let rhs = c.powf(1.0 - 1.0 / 1.7) * m.eps_be(r);
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs());
        }
    }

    #[test]
    fn matches_trapezoid_oracle() {
        let m = reference_model();
        for r in [0.01, 0.05, 0.2, 0.7, 1.0, 3.0, 10.0] {
            let p = m.p_pf(r).unwrap();
            let oracle = trapezoid_p_pf(&m, r, 1e-3);
            assert!((p - oracle).abs() < 1e-4, "r={r}: {p} vs {oracle}");
        }
    }

    #[test]
    fn symmetric_density_at_zero_gamma_is_half() {
        let m = ProfitabilityModel::new(0.0, 0.03, 1.7, symmetric_density(), 10.0).unwrap();
        for r in [0.01, 1.0, 100.0] {
            assert!((m.p_pf(r).unwrap() - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_gamma_gives_mass_above_zero() {
        let gamma = company_gamma(0.04, 0.04);
        assert_eq!(gamma, 0.0);
        let m = ProfitabilityModel::new(gamma, 0.03, 1.7, reference_density(), 10.0).unwrap();
        let above = m.density.mass_between(0.0, 10.0, &quad_cfg()).unwrap()
            + m.density.upper_tail(10.0).unwrap();
        for r in [0.1, 1.0, 10.0] {
            assert!((m.p_pf(r).unwrap() - above).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_gamma_lies_below_zero_gamma() {
        let g = company_gamma(0.01, 0.03);
        let low = ProfitabilityModel::new(g, 0.03, 1.7, reference_density(), 10.0).unwrap();
        let flat = ProfitabilityModel::new(0.0, 0.03, 1.7, reference_density(), 10.0).unwrap();
        for r in [0.1, 1.0, 10.0] {
            assert!(low.p_pf(r).unwrap() < flat.p_pf(r).unwrap());
        }
    }

    #[test]
    fn typical_company_gamma() {
        assert!((company_gamma(0.058, 0.006) - 0.052).abs() < 1e-15);
    }

    #[test]
    fn approaches_one_for_large_revenue() {
        let m = reference_model();
        assert!(m.p_pf(1e8).unwrap() > 0.999);
    }

    #[test]
    fn cutoff_is_immaterial_beyond_eight() {
        let m = ProfitabilityModel::new(0.052, 0.030, 1.7, reference_density(), 8.0).unwrap();
        let rs: Vec<f64> = (0..=60).map(|i| 0.01 * 1000f64.powf(i as f64 / 60.0)).collect();
        let cut = m.p_pf_curve(&rs, TailMode::Truncated).unwrap();
        let full = m.p_pf_curve(&rs, TailMode::Analytic).unwrap();
        for (a, b) in cut.iter().zip(&full) {
            assert!((a - b).abs() < 1e-2);
            assert!(a <= b);
        }
    }

    #[test]
    fn analytic_mode_ignores_cutoff_value() {
        let a = ProfitabilityModel::new(0.052, 0.030, 1.7, reference_density(), 3.0).unwrap();
        let b = ProfitabilityModel::new(0.052, 0.030, 1.7, reference_density(), 40.0).unwrap();
        for r in [0.01, 0.5, 4.0, 300.0] {
            assert!((a.p_pf(r).unwrap() - b.p_pf(r).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_baseline() {
        assert_eq!(p_pf_gaussian(0.0, 0.1, 4.0).unwrap(), 0.5);
        assert!((p_pf_gaussian(0.05, 0.05, 1.0).unwrap() - 0.841_344_746_068_543).abs() < 1e-9);
        assert!(p_pf_gaussian(0.05, 0.0, 1.0).is_err());
        let m = ProfitabilityModel::gaussian(0.052, 0.07, 10.0).unwrap();
        for r in [0.05, 1.0, 9.0] {
            let direct = p_pf_gaussian(0.052, 0.07, r).unwrap();
            assert!((m.p_pf(r).unwrap() - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_models() {
        assert!(ProfitabilityModel::new(0.05, 0.03, 1.0, reference_density(), 10.0).is_err());
        assert!(ProfitabilityModel::new(0.05, 0.0, 1.7, reference_density(), 10.0).is_err());
        assert!(ProfitabilityModel::new(0.05, 0.03, 1.7, reference_density(), 0.0).is_err());
        assert!(reference_model().p_pf(-1.0).is_err());
    }

    #[test]
    fn absolute_prediction_is_consistent() {
        let m = reference_model();
        let grid: Vec<f64> = vec![0.0, 0.01, 0.1, 0.5, 1.0, 5.0, 24.3, 100.0];
        let pred = predict_absolute(&m, 24.3, &grid).unwrap();
        let above = m.density.mass_between(0.0, 10.0, &quad_cfg()).unwrap()
            + m.density.upper_tail(10.0).unwrap();
        assert!((pred.points[0].p_pf - above).abs() < 1e-12);
        assert_eq!(pred.points[6].p_pf, m.p_pf(1.0).unwrap());
        for w in pred.points.windows(2) {
            assert!(w[1].p_pf >= w[0].p_pf);
        }
        let bound = pred.validity_bound.unwrap();
        assert!(bound > 0.0 && bound < 24.3);
        assert!(predict_absolute(&m, 0.0, &grid).is_err());
    }

    fn series(points: &[(f64, f64)]) -> ScaledSeries {
        ScaledSeries {
            entries: points
                .iter()
                .enumerate()
                .map(|(i, &(r, p))| FluctuationEntry {
                    company_id: format!("c{i}"),
                    year: 2000,
                    r,
                    p,
                    dp: 0.0,
                    dpi: 0.0,
                })
                .collect(),
            gamma_g: 0.05,
            eta: 0.6,
            mean_abs_dp: 0.0,
            mean_abs_dpi: 0.0,
            n_below_floor: 0,
        }
    }

    #[test]
    fn all_profitable_bins_are_one() {
        let pts: Vec<(f64, f64)> = (1..200).map(|i| (0.05 * i as f64, 0.01)).collect();
        let bins = empirical_profitability(&series(&pts), 20, 10).unwrap();
        assert!(!bins.is_empty());
        assert!(bins.iter().all(|b| b.fraction == 1.0));
        assert_eq!(bins.iter().map(|b| b.n).sum::<usize>(), pts.len());
    }

    #[test]
    fn low_count_bins_are_flagged() {
        let mut pts: Vec<(f64, f64)> = (0..100).map(|i| (1.0 + 0.001 * i as f64, -0.01)).collect();
        pts.push((50.0, 1.0));
        let bins = empirical_profitability(&series(&pts), 10, 10).unwrap();
        assert_eq!(bins.len(), 2);
        assert!(!bins[0].low_count && bins[0].fraction == 0.0);
        assert!(bins[1].low_count && bins[1].fraction == 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn monotone_in_revenue(gamma in -0.1f64..0.1, r in 0.01f64..10.0, f in 1.01f64..5.0) {
            let m = ProfitabilityModel::new(gamma, 0.03, 1.7, reference_density(), 10.0).unwrap();
            let a = m.p_pf(r).unwrap();
            let b = m.p_pf(r * f).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            if gamma > 0.0 {
                prop_assert!(b >= a - 1e-12);
            } else if gamma < 0.0 {
                prop_assert!(b <= a + 1e-12);
            }
        }
    }
}
