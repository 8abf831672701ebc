//! Plot-ready tab-separated series, one bundle per figure.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::AnalysisReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FigureId {
    Fig1a,
    Fig1b,
    Fig2,
    Fig3a,
    Fig3b,
    Fig4,
    Fig5,
    Fig6,
}

impl FigureId {
    pub const ALL: [FigureId; 8] = [
        FigureId::Fig1a,
        FigureId::Fig1b,
        FigureId::Fig2,
        FigureId::Fig3a,
        FigureId::Fig3b,
        FigureId::Fig4,
        FigureId::Fig5,
        FigureId::Fig6,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FigureId::Fig1a => "fig1a",
            FigureId::Fig1b => "fig1b",
            FigureId::Fig2 => "fig2",
            FigureId::Fig3a => "fig3a",
            FigureId::Fig3b => "fig3b",
            FigureId::Fig4 => "fig4",
            FigureId::Fig5 => "fig5",
            FigureId::Fig6 => "fig6",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.tsv", self.as_str())
    }
}

impl FromStr for FigureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FigureId::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::domain(format!("unknown figure id {s:?}")))
    }
}

struct Table {
    out: String,
}

impl Table {
    fn new(label: &str, title: &str, columns: &[(&str, &str)], extra: &[String]) -> Self {
        let mut out = String::new();
        let _ = writeln!(out, "# {label}: {title}");
        for line in extra {
            let _ = writeln!(out, "# {line}");
        }
        for (name, unit) in columns {
            let _ = writeln!(out, "# column {name}: {unit}");
        }
        let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
        out.push_str(&names.join("\t"));
        out.push('\n');
        Self { out }
    }

    fn row(&mut self, cells: &[String]) {
        self.out.push_str(&cells.join("\t"));
        self.out.push('\n');
    }
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "nan".into()
    }
}

/// Renders the series for `figure`. Output depends only on the report.
pub fn emit_series(report: &AnalysisReport, figure: FigureId) -> Result<String> {
    let unit = report
        .panel
        .as_ref()
        .map(|p| p.unit_label.clone())
        .unwrap_or_else(|| "currency".into());
    let table = match figure {
        FigureId::Fig1a => {
            let t = report.trend_stage()?;
            let mut tab = Table::new(
                figure.as_str(),
                "yearly mean revenue and its exponential trend",
                &[
                    ("year", "calendar year"),
                    ("R0", &unit),
                    ("R0_fit", &unit),
                    ("log_residual", "ln(R0 / R0_fit)"),
                ],
                &[format!(
                    "A={} B={} y0={}",
                    num(t.revenue_trend.amplitude),
                    num(t.revenue_trend.efold_years),
                    t.revenue_trend.y0
                )],
            );
            for m in &t.yearly {
                let fit = t.revenue_trend.value_at(m.year);
                tab.row(&[m.year.to_string(), num(m.r0), num(fit), num((m.r0 / fit).ln())]);
            }
            tab
        }
        FigureId::Fig1b => {
            let t = report.trend_stage()?;
            let anomalous = &report.config.anomalous_years;
            let mut extra = Vec::new();
            if let Some(p) = &t.proportionality {
                extra.push(format!(
                    "P0 = {} R0 + {} (r2={}); through origin {}",
                    num(p.slope),
                    num(p.intercept),
                    num(p.r_squared),
                    num(p.slope_through_origin)
                ));
            }
            let mut tab = Table::new(
                figure.as_str(),
                "yearly mean profit, its trend and the linear relation to mean revenue",
                &[
                    ("year", "calendar year"),
                    ("R0", &unit),
                    ("P0", &unit),
                    ("P0_trend", &unit),
                    ("P0_linear", &unit),
                    ("anomalous", "1 if excluded from typical-year fits"),
                ],
                &extra,
            );
            for m in &t.yearly {
                let trend = t.profit_trend.as_ref().map_or(f64::NAN, |f| f.value_at(m.year));
                let linear = t
                    .proportionality
                    .as_ref()
                    .map_or(f64::NAN, |p| p.slope * m.r0 + p.intercept);
                tab.row(&[
                    m.year.to_string(),
                    num(m.r0),
                    num(m.p0),
                    num(trend),
                    num(linear),
                    u8::from(anomalous.contains(&m.year)).to_string(),
                ]);
            }
            tab
        }
        FigureId::Fig2 => {
            let d = report.pdf_stage()?;
            let f = &d.revenue_fit;
            let mut tab = Table::new(
                figure.as_str(),
                "density of scaled revenue with the fitted power law times exponential",
                &[
                    ("bin_center", "r, dimensionless"),
                    ("density", "1/r"),
                    ("fitted_density", "1/r"),
                ],
                &[format!(
                    "prefactor={} power={} cutoff={} fit_range=[{}, {}]",
                    num(f.prefactor),
                    num(f.power_exponent),
                    num(f.cutoff_scale),
                    num(f.fit_range_min),
                    num(f.fit_range_max)
                )],
            );
            let mass = d.revenue_pdf.in_range_fraction();
            for (c, dens) in d.revenue_pdf.centers().into_iter().zip(&d.revenue_pdf.densities) {
                let fitted = if c > f.fit_range_min { f.density(c) } else { f64::NAN };
                tab.row(&[num(c), num(dens * mass), num(fitted)]);
            }
            tab
        }
        FigureId::Fig3a | FigureId::Fig3b => {
            let e = report.eta_stage()?;
            let s = &e.series;
            let (title, col, scale) = if figure == FigureId::Fig3a {
                ("profit fluctuations around gamma_g r", "dp_over_mean_abs_dp", s.mean_abs_dp)
            } else {
                ("profit fluctuations rescaled by r^eta", "dpi_over_mean_abs_dpi", s.mean_abs_dpi)
            };
            let mut tab = Table::new(
                figure.as_str(),
                title,
                &[("r", "dimensionless"), (col, "dimensionless")],
                &[format!(
                    "gamma_g={} eta={} sigma_eta={}",
                    num(e.gamma_g),
                    num(e.eta),
                    num(e.search.sigma_eta_raw)
                )],
            );
            for entry in &s.entries {
                let v = if figure == FigureId::Fig3a { entry.dp } else { entry.dpi };
                tab.row(&[num(entry.r), num(v / scale)]);
            }
            tab
        }
        FigureId::Fig4 => {
            let d = report.pdf_stage()?;
            let mut extra = vec![format!(
                "hill_alpha={} (positive {}, negative {}) levy_like={}",
                num(d.hill.alpha()),
                num(d.hill.positive.alpha),
                num(d.hill.negative.alpha),
                d.levy_like
            )];
            if let Some(f) = &d.tail_fit {
                extra.push(format!(
                    "negative a={} b={} c={}; positive a={} c={}; tail_power={}",
                    num(f.a_neg),
                    num(f.b_neg),
                    num(f.c_neg),
                    num(f.a_pos),
                    num(f.c_pos),
                    num(f.tail_power)
                ));
            }
            let mut tab = Table::new(
                figure.as_str(),
                "density of unit-amplitude fluctuations with the fitted heavy-tail form and a normal overlay",
                &[
                    ("bin_center", "epsilon, dimensionless"),
                    ("density", "1/epsilon"),
                    ("fitted_density", "1/epsilon"),
                    ("gaussian_density", "normal with E|epsilon| = 1"),
                ],
                &extra,
            );
            let sigma = std::f64::consts::FRAC_PI_2.sqrt();
            let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            for (c, dens) in d.fluctuation_pdf.centers().into_iter().zip(&d.fluctuation_pdf.densities) {
                let fitted = d.tail_fit.as_ref().map_or(f64::NAN, |f| f.eval(c));
                let gauss = norm * (-0.5 * (c / sigma).powi(2)).exp();
                tab.row(&[num(c), num(*dens), num(fitted), num(gauss)]);
            }
            tab
        }
        FigureId::Fig5 => {
            let p = report.profitability_stage()?;
            let mut tab = Table::new(
                figure.as_str(),
                "fraction of profitable company-years against scaled revenue",
                &[
                    ("r_bin_center", "dimensionless"),
                    ("empirical_fraction", "probability"),
                    ("n", "count"),
                    ("levy_prediction", "probability"),
                    ("gaussian_prediction", "probability"),
                ],
                &[format!(
                    "alpha={} ({:?}) rms_levy={} rms_gaussian={}",
                    num(p.model.alpha),
                    p.alpha_source,
                    num(p.rms_levy),
                    num(p.rms_gaussian)
                )],
            );
            for ((b, l), g) in p.bins.iter().zip(&p.levy_at_bins).zip(&p.gaussian_at_bins) {
                tab.row(&[num(b.r_bin_center), num(b.fraction), b.n.to_string(), num(*l), num(*g)]);
            }
            tab
        }
        FigureId::Fig6 => {
            let p = report.profitability_stage()?;
            let bound = |b: Option<f64>| b.map_or("none".to_string(), num);
            let mut tab = Table::new(
                figure.as_str(),
                "probability of profitability against absolute revenue",
                &[
                    ("R_absolute", &unit),
                    ("p_pf", "probability"),
                    ("linear_approx", "probability"),
                    ("gaussian_p_pf", "probability"),
                    ("gaussian_linear_approx", "probability"),
                ],
                &[
                    format!("R0_forecast={}", num(p.r0_forecast)),
                    format!(
                        "p_pf(0)={} linear_valid_below={} gaussian_linear_valid_below={}",
                        num(p.absolute.p_pf_at_zero),
                        bound(p.absolute.validity_bound),
                        bound(p.absolute_gaussian.validity_bound)
                    ),
                ],
            );
            for (a, g) in p.absolute.points.iter().zip(&p.absolute_gaussian.points) {
                tab.row(&[
                    num(a.revenue),
                    num(a.p_pf),
                    num(a.linear_approx),
                    num(g.p_pf),
                    num(g.linear_approx),
                ]);
            }
            tab
        }
    };
    Ok(table.out)
}

/// The `(eta, sigma_eta)` profile of the variance search.
pub fn emit_eta_profile(report: &AnalysisReport) -> Result<String> {
    let e = report.eta_stage()?;
    let mut tab = Table::new(
        "eta_profile",
        "variance objective over the eta grid",
        &[("eta", "dimensionless"), ("sigma_eta", "dimensionless")],
        &[format!("eta_star={} r_ref={}", num(e.search.eta_star), num(e.search.r_ref))],
    );
    for p in &e.search.grid {
        tab.row(&[num(p.eta), num(p.sigma)]);
    }
    Ok(tab.out)
}
