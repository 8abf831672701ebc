//! Cost-volume-profit algebra.
//!
//! Profit is revenue minus variable and fixed costs, `P = R - (V_c + F)`.
//! With sale price and volume proportional to unit cost and produced volume
//! (`v_s = alpha_s v_c`, `n_s = beta_s n_c`) the variable cost becomes
//! `R / (alpha_s beta_s)` and profit collapses to `P = gamma_s R - F` with
//! `gamma_s = (alpha_s beta_s - 1) / (alpha_s beta_s)`.
//!
//! Only the products and margins are represented; the individual unit prices
//! and volumes never enter any downstream formula.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvpParams {
    /// Sale-to-cost price ratio, `> 1`.
    pub alpha_s: f64,
    /// Sold-to-produced volume ratio, in `[0, 1]`.
    pub beta_s: f64,
    pub gamma_s: f64,
    /// Fixed costs as a fraction of revenue.
    pub gamma_c: f64,
    /// Net growth factor `gamma_s - gamma_c`.
    pub gamma_g: f64,
    /// Fixed costs, currency.
    pub fixed_cost: f64,
}

impl CvpParams {
    /// Builds a consistent parameter set; `gamma_s` and `gamma_g` are derived.
    pub fn new(alpha_s: f64, beta_s: f64, gamma_c: f64, fixed_cost: f64) -> Result<Self> {
        if !(alpha_s > 1.0) {
            return Err(Error::domain(format!("alpha_s must exceed 1, got {alpha_s}")));
        }
        if !(0.0..=1.0).contains(&beta_s) {
            return Err(Error::domain(format!("beta_s must lie in [0, 1], got {beta_s}")));
        }
        if !(fixed_cost >= 0.0) {
            return Err(Error::domain(format!("fixed cost must be >= 0, got {fixed_cost}")));
        }
        let gamma_s = gamma_s_from_product(alpha_s * beta_s)?;
        Ok(Self {
            alpha_s,
            beta_s,
            gamma_s,
            gamma_c,
            gamma_g: gamma_s - gamma_c,
            fixed_cost,
        })
    }

    pub fn alpha_beta(&self) -> f64 {
        self.alpha_s * self.beta_s
    }
}

/// `P = gamma_s R - F`.
pub fn profit(revenue: f64, params: &CvpParams) -> f64 {
    params.gamma_s * revenue - params.fixed_cost
}

/// Contribution margin `(ab - 1) / ab` for the price-volume product `ab`.
/// Negative when the product is below one; always below one.
pub fn gamma_s_from_product(alpha_beta: f64) -> Result<f64> {
    if !(alpha_beta > 0.0) || !alpha_beta.is_finite() {
        return Err(Error::domain(format!(
            "alpha_s * beta_s must be positive and finite, got {alpha_beta}"
        )));
    }
    Ok((alpha_beta - 1.0) / alpha_beta)
}

/// Lower bounds implied by a positive mean growth factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub gamma_g: f64,
    pub alpha_beta_lower: f64,
    pub gamma_s_lower: f64,
    pub gamma_c_lower: f64,
}

/// Bounds from `<gamma_g> = <gamma_s> - <gamma_c>` with `<gamma_c> > 0`.
///
/// Uses the mean-of-reciprocal approximation `<1/(ab)> ~ 1/<ab>`, so that
/// `<ab> > 1/(1 - <gamma_g>)`. Note the bound on `gamma_s` is then exactly
/// `gamma_g` and the bound on `gamma_c` is zero; the nonzero margins often quoted
/// for `gamma_g = 0.052` (`ab > 1.062`, `gamma_s > 0.058`,
/// `gamma_c > 0.006`) correspond to `gamma_g ~ 0.0584` instead. The exact
/// route gives `1/(1 - 0.052) = 1.05485...`.
pub fn bound_report(gamma_g: f64) -> Result<BoundReport> {
    if !(gamma_g > 0.0 && gamma_g < 1.0) {
        return Err(Error::domain(format!("gamma_g must lie in (0, 1), got {gamma_g}")));
    }
    let alpha_beta_lower = 1.0 / (1.0 - gamma_g);
    let gamma_s_lower = gamma_s_from_product(alpha_beta_lower)?;
    Ok(BoundReport {
        gamma_g,
        alpha_beta_lower,
        gamma_s_lower,
        gamma_c_lower: gamma_s_lower - gamma_g,
    })
}
