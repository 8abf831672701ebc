//! Scaled revenue and profit, profit fluctuations about the mean line
//! `p_bar = gamma_g r`, and the stationarity exponent `eta` that makes the
//! rescaled fluctuations `dpi = dp / r^eta` independent of `r`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::stats::{mean, mean_abs, variance};
use crate::trend::TrendFit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledPoint {
    pub company_id: String,
    pub year: i32,
    /// `R / R0(year)`
    pub r: f64,
    /// `P / R0(year)`
    pub p: f64,
}

/// Divides revenue and profit by the trend value of the record's year.
pub fn scale_panel(panel: &Panel, trend: &TrendFit) -> Vec<ScaledPoint> {
    panel
        .records()
        .iter()
        .map(|rec| {
            let r0 = trend.value_at(rec.year);
            ScaledPoint {
                company_id: rec.company_id.clone(),
                year: rec.year,
                r: rec.revenue / r0,
                p: rec.profit / r0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationEntry {
    pub company_id: String,
    pub year: i32,
    pub r: f64,
    pub p: f64,
    /// `p - gamma_g r`
    pub dp: f64,
    /// `dp / r^eta`
    pub dpi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledSeries {
    pub entries: Vec<FluctuationEntry>,
    pub gamma_g: f64,
    pub eta: f64,
    pub mean_abs_dp: f64,
    pub mean_abs_dpi: f64,
    /// Points dropped because `r` was below the floor.
    pub n_below_floor: usize,
}

impl ScaledSeries {
    /// `dpi / <|dpi|>`, the unit-amplitude fluctuation variable.
    pub fn epsilons(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.dpi / self.mean_abs_dpi).collect()
    }

    pub fn r_values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.r).collect()
    }
}

/// Default lower bound on `r` for fluctuation statistics.
pub const DEFAULT_R_FLOOR: f64 = 1e-6;

pub fn fluctuations(
    scaled: &[ScaledPoint],
    gamma_g: f64,
    eta: f64,
    r_floor: f64,
) -> Result<ScaledSeries> {
    if !(eta >= 0.0) {
        return Err(Error::domain(format!("eta must be >= 0, got {eta}")));
    }
    let mut entries = Vec::with_capacity(scaled.len());
    let mut n_below_floor = 0;
    for s in scaled {
        if !(s.r >= r_floor) || !(s.r > 0.0) {
            n_below_floor += 1;
            continue;
        }
        let dp = s.p - gamma_g * s.r;
        entries.push(FluctuationEntry {
            company_id: s.company_id.clone(),
            year: s.year,
            r: s.r,
            p: s.p,
            dp,
            dpi: dp / s.r.powf(eta),
        });
    }
    if entries.is_empty() {
        return Err(Error::InsufficientData {
            what: "fluctuation entries above the r floor",
            needed: 1,
            got: 0,
        });
    }
    let dp: Vec<f64> = entries.iter().map(|e| e.dp).collect();
    let dpi: Vec<f64> = entries.iter().map(|e| e.dpi).collect();
    Ok(ScaledSeries {
        mean_abs_dp: mean_abs(&dp),
        mean_abs_dpi: mean_abs(&dpi),
        entries,
        gamma_g,
        eta,
        n_below_floor,
    })
}

/// Unit in which `r` is measured inside the variance objective.
///
/// `sigma_eta^2 = Var(dp / r^eta)` depends on the unit of `r` through the
/// factor `unit^eta`, so its minimizer moves when revenues are rescaled.
/// `GeometricMean` measures `r` relative to its geometric mean, which makes
/// the minimizer unit-free; `Unit` evaluates the variance on `r` as given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceScale {
    Unit,
    #[default]
    GeometricMean,
}

/// Dispersion of the rescaled fluctuations minimized over `eta`.
///
/// `Variance` is the standard deviation of `dpi` itself. Under infinite-variance
/// noise it is dominated by a handful of extreme points and scatters widely
/// between samples. `LogScale` is the standard deviation of `ln|dpi|`; its
/// minimizer is the least-squares slope of `ln|dp|` on `ln r`, which stays
/// stable for any noise with a finite log-moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EtaObjective {
    Variance,
    #[default]
    LogScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EtaSearchConfig {
    pub objective: EtaObjective,
    pub eta_max: f64,
    pub step: f64,
    /// Golden-section refinement tolerance on `eta`.
    pub tolerance: f64,
    pub reference: ReferenceScale,
    /// 1 = minimize over `eta`, then tune `gamma_g` once. Larger values
    /// alternate the two steps until a joint fixed point (at most this many rounds).
    pub max_rounds: usize,
    pub r_floor: f64,
}

impl Default for EtaSearchConfig {
    fn default() -> Self {
        Self {
            objective: EtaObjective::default(),
            eta_max: 1.2,
            step: 0.01,
            tolerance: 1e-3,
            reference: ReferenceScale::GeometricMean,
            max_rounds: 1,
            r_floor: DEFAULT_R_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaPoint {
    pub eta: f64,
    /// Objective value: standard deviation of `dp / (r / r_ref)^eta`, or of
    /// its logarithm for `EtaObjective::LogScale`.
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaRound {
    pub gamma_g_in: f64,
    pub eta_star: f64,
    pub gamma_g_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaSearchResult {
    pub eta_star: f64,
    /// Objective at `eta_star` (refined; never above the grid minimum).
    pub sigma_eta_star: f64,
    /// `std(dp / r^eta_star)` on the unrescaled `r`, comparable across data sets
    /// only when `r` is normalized to the yearly mean.
    pub sigma_eta_raw: f64,
    pub r_ref: f64,
    pub grid: Vec<EtaPoint>,
    pub gamma_g_tuned: f64,
    /// `mean(dpi)` at `(eta_star, gamma_g_tuned)`.
    pub residual_mean_dpi: f64,
    /// Another grid point, not adjacent to the argmin, attains the same minimum.
    pub multiple_minima: bool,
    pub rounds: Vec<EtaRound>,
}

/// `(r, p)` pairs above the floor.
fn usable_points(scaled: &[ScaledPoint], r_floor: f64) -> Vec<(f64, f64)> {
    scaled
        .iter()
        .filter(|s| s.r >= r_floor && s.r > 0.0)
        .map(|s| (s.r, s.p))
        .collect()
}

fn sigma_at(points: &[(f64, f64)], gamma_g: f64, eta: f64, r_ref: f64) -> f64 {
    let dpi: Vec<f64> = points
        .iter()
        .map(|&(r, p)| (p - gamma_g * r) / (r / r_ref).powf(eta))
        .collect();
    variance(&dpi).sqrt()
}

fn log_scale_at(points: &[(f64, f64)], gamma_g: f64, eta: f64, r_ref: f64) -> f64 {
    let v: Vec<f64> = points
        .iter()
        .filter_map(|&(r, p)| {
            let dp = (p - gamma_g * r).abs();
            (dp > 0.0).then(|| dp.ln() - eta * (r / r_ref).ln())
        })
        .collect();
    if v.len() < 2 {
        return f64::NAN;
    }
    variance(&v).sqrt()
}

fn objective_at(points: &[(f64, f64)], gamma_g: f64, eta: f64, r_ref: f64, objective: EtaObjective) -> f64 {
    match objective {
        EtaObjective::Variance => sigma_at(points, gamma_g, eta, r_ref),
        EtaObjective::LogScale => log_scale_at(points, gamma_g, eta, r_ref),
    }
}

fn mean_dpi(points: &[(f64, f64)], gamma_g: f64, eta: f64) -> f64 {
    let v: Vec<f64> = points
        .iter()
        .map(|&(r, p)| (p - gamma_g * r) / r.powf(eta))
        .collect();
    mean(&v)
}

/// Golden-section minimization of `f` on `[a, b]`.
fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Solves `mean(dpi(eta, gamma)) = 0` for `gamma` by bracketed bisection.
///
/// The mean is affine and strictly decreasing in `gamma` (its slope is
/// `-mean(r^(1-eta)) < 0`), so the root is unique once bracketed.
pub fn tune_gamma(scaled: &[ScaledPoint], eta: f64, gamma_init: f64, r_floor: f64) -> Result<f64> {
    let pts = usable_points(scaled, r_floor);
    if pts.is_empty() {
        return Err(Error::InsufficientData {
            what: "points for gamma tuning",
            needed: 1,
            got: 0,
        });
    }
    tune_gamma_points(&pts, eta, gamma_init)
}

fn tune_gamma_points(pts: &[(f64, f64)], eta: f64, gamma_init: f64) -> Result<f64> {
    let g = |gamma: f64| mean_dpi(pts, gamma, eta);
    let mut width = gamma_init.abs().max(0.01);
    let (mut lo, mut hi) = (gamma_init - width, gamma_init + width);
    let mut expansions = 0;
    while !(g(lo) >= 0.0 && g(hi) <= 0.0) {
        width *= 2.0;
        lo = gamma_init - width;
        hi = gamma_init + width;
        expansions += 1;
        if expansions > 200 || !width.is_finite() {
            return Err(Error::domain("could not bracket the gamma_g root"));
        }
    }
    let (glo, ghi) = (g(lo), g(hi));
    assert!(
        glo >= ghi,
        "mean fluctuation must decrease with gamma_g ({glo} < {ghi})"
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return Ok(mid);
        }
        if gm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (flo, fhi) = (g(lo).abs(), g(hi).abs());
    Ok(if flo <= fhi { lo } else { hi })
}

fn geometric_mean(pts: &[(f64, f64)]) -> f64 {
    (pts.iter().map(|(r, _)| r.ln()).sum::<f64>() / pts.len() as f64).exp()
}

struct Minimum {
    eta: f64,
    sigma: f64,
    grid: Vec<EtaPoint>,
    multiple: bool,
}

fn minimize_eta(pts: &[(f64, f64)], gamma_g: f64, r_ref: f64, cfg: &EtaSearchConfig) -> Minimum {
    let n_steps = (cfg.eta_max / cfg.step).round() as usize;
    let grid: Vec<EtaPoint> = (0..=n_steps)
        .into_par_iter()
        .map(|i| {
            let eta = i as f64 * cfg.step;
            EtaPoint {
                eta,
                sigma: objective_at(pts, gamma_g, eta, r_ref, cfg.objective),
            }
        })
        .collect();
    let (imin, best) = grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.sigma.total_cmp(&b.1.sigma))
        .map(|(i, p)| (i, *p))
        .expect("grid is nonempty");
    let tie_tol = best.sigma * 1e-12;
    let multiple = grid
        .iter()
        .enumerate()
        .any(|(i, p)| i.abs_diff(imin) > 1 && p.sigma - best.sigma <= tie_tol);
    // smallest eta among tied minima
    let imin = grid
        .iter()
        .position(|p| p.sigma - best.sigma <= tie_tol)
        .unwrap_or(imin);

    let a = grid[imin.saturating_sub(1)].eta;
    let b = grid[(imin + 1).min(grid.len() - 1)].eta;
    let (mut eta, mut sigma) = (grid[imin].eta, grid[imin].sigma);
    if b > a {
        let (e, s) = golden_section(
            |x| objective_at(pts, gamma_g, x, r_ref, cfg.objective),
            a,
            b,
            cfg.tolerance,
        );
        if s < sigma {
            eta = e;
            sigma = s;
        }
    }
    Minimum {
        eta,
        sigma,
        grid,
        multiple,
    }
}

/// Grid search for the `eta` minimizing the fluctuation dispersion, golden-section
/// refinement between the neighbours of the grid minimum, then tuning of
/// `gamma_g` so that the rescaled fluctuations have zero mean.
pub fn eta_search(
    scaled: &[ScaledPoint],
    gamma_g_init: f64,
    cfg: &EtaSearchConfig,
) -> Result<EtaSearchResult> {
    if !(cfg.eta_max >= 1.0) || !(cfg.step > 0.0) || !(cfg.tolerance > 0.0) {
        return Err(Error::domain(
            "eta grid must cover [0, eta_max >= 1] with positive step and tolerance",
        ));
    }
    let pts = usable_points(scaled, cfg.r_floor);
    if pts.len() < 2 {
        return Err(Error::InsufficientData {
            what: "eta search points",
            needed: 2,
            got: pts.len(),
        });
    }
    let r_ref = match cfg.reference {
        ReferenceScale::Unit => 1.0,
        ReferenceScale::GeometricMean => geometric_mean(&pts),
    };

    if cfg.objective == EtaObjective::LogScale
        && log_scale_at(&pts, gamma_g_init, 0.0, r_ref).is_nan()
    {
        return Err(Error::DegenerateFlat);
    }

    let mut gamma = gamma_g_init;
    let mut rounds = Vec::new();
    let mut last: Option<Minimum> = None;
    for _ in 0..cfg.max_rounds.max(1) {
        let m = minimize_eta(&pts, gamma, r_ref, cfg);
        let tuned = tune_gamma_points(&pts, m.eta, gamma)?;
        rounds.push(EtaRound {
            gamma_g_in: gamma,
            eta_star: m.eta,
            gamma_g_out: tuned,
        });
        let converged = last
            .as_ref()
            .is_some_and(|prev| (prev.eta - m.eta).abs() <= cfg.tolerance && (tuned - gamma).abs() <= 1e-9);
        gamma = tuned;
        last = Some(m);
        if converged {
            break;
        }
    }
    let m = last.expect("at least one round");
    Ok(EtaSearchResult {
        eta_star: m.eta,
        sigma_eta_star: m.sigma,
        sigma_eta_raw: sigma_at(&pts, gamma, m.eta, 1.0),
        r_ref,
        grid: m.grid,
        gamma_g_tuned: gamma,
        residual_mean_dpi: mean_dpi(&pts, gamma, m.eta),
        multiple_minima: m.multiple,
        rounds,
    })
}
