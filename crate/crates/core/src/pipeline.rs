//! End-to-end analysis: ingest, detrend, rescale, eta search, fluctuation
//! densities and profitability curves, collected into one serializable report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dist::{
    empirical_pdf, empirical_pdf_in_range, fit_fluctuation_pdf, fit_revenue_pdf,
    hill_tail_exponent, Binning, EmpiricalPdf, FluctuationDensity, HillEstimate,
    NormalizedTailDensity, RevenuePdfFit, TailFit, TailFitConfig,
};
use crate::error::{Error, Result};
use crate::panel::{ingest, yearly_means, IngestConfig, Panel, PanelMetadata, RejectionReport, YearlyMean};
use crate::profitability::{
    empirical_profitability, predict_absolute, AbsolutePrediction, ProfitabilityBin,
    ProfitabilityModel,
};
use crate::scaling::{
    eta_search, fluctuations, scale_panel, EtaSearchConfig, EtaSearchResult, ScaledPoint,
    ScaledSeries,
};
use crate::stats::variance;
use crate::trend::{
    fit_exponential, fit_exponential_fixed_rate, fit_proportionality, flag_anomalous,
    profit_series, revenue_series, ProportionalityFit, TrendFit,
};

/// Bumped whenever a default below changes value.
pub const CONSTANTS_VERSION: &str = "defaults-v1";

/// Pipeline stage, used for error attribution and exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Trend,
    Scale,
    Eta,
    Pdf,
    Profitability,
    Emit,
    Simulate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Trend => "trend",
            Stage::Scale => "scale",
            Stage::Eta => "eta",
            Stage::Pdf => "pdf",
            Stage::Profitability => "profitability",
            Stage::Emit => "emit",
            Stage::Simulate => "simulate",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Ingest => 3,
            Stage::Trend => 4,
            Stage::Scale => 5,
            Stage::Eta => 6,
            Stage::Pdf => 7,
            Stage::Profitability => 8,
            Stage::Emit => 9,
            Stage::Simulate => 10,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which tail index drives the break-even exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSource {
    Hill,
    TailFit,
    /// `1 / eta_star`, the stable-sum relation between the two exponents. Keeps
    /// the threshold exponent consistent with the scaling that produced the density.
    #[default]
    InverseEta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub ingest: IngestConfig,
    pub anomalous_years: BTreeSet<i32>,
    /// Base year of the exponential trends; first panel year when absent.
    pub trend_base_year: Option<i32>,
    /// Leave anomalous years out of the revenue trend fit.
    pub trend_exclude_anomalous: bool,
    /// Residual multiple used to flag candidate anomalous years.
    pub anomaly_threshold: f64,
    /// Leave anomalous years out of the eta search and densities.
    pub scaling_exclude_anomalous: bool,
    pub gamma_g_init: f64,
    pub eta_search: EtaSearchConfig,
    pub revenue_bins: usize,
    pub revenue_r_min: f64,
    pub fluctuation_bins: usize,
    pub fluctuation_range: (f64, f64),
    pub tail_fit: TailFitConfig,
    pub hill_k_fraction: f64,
    pub alpha_source: AlphaSource,
    pub eps_cut: f64,
    pub profitability_bins: usize,
    pub min_bin_count: usize,
    pub profitability_exclude_anomalous: bool,
    /// Scaled-revenue range and point count of the continuous curves.
    pub curve_range: (f64, f64),
    pub curve_points: usize,
    /// Mean revenue used for absolute predictions; trend extrapolated one
    /// year past the panel when absent.
    pub r0_forecast: Option<f64>,
    pub absolute_range: (f64, f64),
    pub absolute_points: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            output_dir: PathBuf::from("out"),
            ingest: IngestConfig::default(),
            anomalous_years: [1991, 1992, 1993, 2001, 2002].into_iter().collect(),
            trend_base_year: None,
            trend_exclude_anomalous: false,
            anomaly_threshold: 3.0,
            scaling_exclude_anomalous: false,
            gamma_g_init: 0.056,
            eta_search: EtaSearchConfig {
                max_rounds: 3,
                ..EtaSearchConfig::default()
            },
            revenue_bins: 50,
            revenue_r_min: 0.2,
            fluctuation_bins: 60,
            fluctuation_range: (-12.0, 12.0),
            tail_fit: TailFitConfig::default(),
            hill_k_fraction: 0.05,
            alpha_source: AlphaSource::default(),
            eps_cut: 10.0,
            profitability_bins: 20,
            min_bin_count: 10,
            profitability_exclude_anomalous: true,
            curve_range: (0.01, 10.0),
            curve_points: 61,
            r0_forecast: None,
            absolute_range: (0.01, 1000.0),
            absolute_points: 81,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("anomaly_threshold", self.anomaly_threshold),
            ("revenue_r_min", self.revenue_r_min),
            ("hill_k_fraction", self.hill_k_fraction),
            ("eps_cut", self.eps_cut),
            ("eta_search.step", self.eta_search.step),
            ("eta_search.tolerance", self.eta_search.tolerance),
            ("curve_range.0", self.curve_range.0),
            ("absolute_range.0", self.absolute_range.0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        if self.revenue_bins < 4 || self.fluctuation_bins < 4 || self.profitability_bins < 1 {
            return Err(Error::domain("bin counts are too small"));
        }
        if !(self.fluctuation_range.0 < 0.0 && self.fluctuation_range.1 > 0.0) {
            return Err(Error::domain("fluctuation range must straddle zero"));
        }
        if !(self.curve_range.1 > self.curve_range.0) || self.curve_points < 2 {
            return Err(Error::domain("curve range must be increasing with at least 2 points"));
        }
        if !(self.absolute_range.1 > self.absolute_range.0) || self.absolute_points < 2 {
            return Err(Error::domain("absolute range must be increasing with at least 2 points"));
        }
        if let Some(r0) = self.r0_forecast {
            if !(r0 > 0.0) {
                return Err(Error::domain(format!("r0_forecast must be positive, got {r0}")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn default_constants() -> BTreeMap<&'static str, &'static str> {
        BTreeMap::from([
            ("anomalous_years", "1991-1993, 2001-2002: years with mean profit far below the trend"),
            ("gamma_g_init", "0.056: slope of the mean profit vs revenue scatter"),
            ("eps_cut", "10: upper fluctuation cutoff beyond which results stop changing"),
            ("hill_k_fraction", "0.05: share of each tail used by the Hill estimator"),
            ("revenue_r_min", "0.2: lower end of the revenue power-law fit"),
            ("profitability_bins", "20 log-spaced bins over the observed r"),
            ("eta_objective", "log_scale: dispersion of ln|dpi|, robust to infinite variance"),
            ("eta_rounds", "3 alternations of eta search and gamma_g tuning"),
            ("alpha_source", "inverse_eta: alpha = 1 / eta_star"),
        ])
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendStage {
    pub base_year: i32,
    pub yearly: Vec<YearlyMean>,
    pub revenue_trend: TrendFit,
    /// Profit trend sharing the revenue e-folding time, fitted on typical years.
    pub profit_trend: Option<TrendFit>,
    pub proportionality: Option<ProportionalityFit>,
    /// Years whose mean profit departs from the profit trend by more than
    /// `anomaly_threshold` residual RMS; informational only.
    pub flagged_years: BTreeSet<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleStage {
    pub points: Vec<ScaledPoint>,
    pub excluded_years: BTreeSet<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaStage {
    pub search: EtaSearchResult,
    pub gamma_g: f64,
    pub eta: f64,
    pub series: ScaledSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdfStage {
    pub revenue_pdf: EmpiricalPdf,
    pub revenue_fit: RevenuePdfFit,
    pub fluctuation_pdf: EmpiricalPdf,
    pub tail_fit: Option<TailFit>,
    pub hill: HillEstimate,
    /// Both tails look like power laws with index in (0, 2).
    pub levy_like: bool,
    /// Standard deviation of the fluctuations on the `eta = 1/2` track.
    pub gaussian_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub r: f64,
    pub levy: f64,
    pub gaussian: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitabilityStage {
    pub alpha_source: AlphaSource,
    pub model: ProfitabilityModel,
    pub gaussian_model: ProfitabilityModel,
    pub bins: Vec<ProfitabilityBin>,
    pub levy_at_bins: Vec<f64>,
    pub gaussian_at_bins: Vec<f64>,
    /// RMS deviation from the empirical fractions over bins that are not low-count.
    pub rms_levy: f64,
    pub rms_gaussian: f64,
    pub curve: Vec<CurvePoint>,
    pub r0_forecast: f64,
    pub absolute: AbsolutePrediction,
    pub absolute_gaussian: AbsolutePrediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub constants_version: String,
    pub defaults: BTreeMap<String, String>,
    pub config_hash: String,
    pub config: RunConfig,
    pub panel: Option<PanelMetadata>,
    pub trend: Option<TrendStage>,
    pub scale: Option<ScaleStage>,
    pub eta: Option<EtaStage>,
    pub pdf: Option<PdfStage>,
    pub profitability: Option<ProfitabilityStage>,
    pub series_files: Vec<String>,
    pub warnings: Vec<String>,
}

type StageStep<'a> = (Stage, &'a dyn Fn(&mut AnalysisReport) -> Result<()>);

impl AnalysisReport {
    pub fn new(config: RunConfig) -> Self {
        Self {
            constants_version: CONSTANTS_VERSION.into(),
            defaults: RunConfig::default_constants()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            config_hash: config.hash(),
            config,
            panel: None,
            trend: None,
            scale: None,
            eta: None,
            pdf: None,
            profitability: None,
            series_files: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn require<'a, T>(stage: &'a Option<T>, name: &'static str) -> Result<&'a T> {
        stage.as_ref().ok_or(Error::MissingStage(name))
    }

    pub fn trend_stage(&self) -> Result<&TrendStage> {
        Self::require(&self.trend, "trend")
    }

    pub fn scale_stage(&self) -> Result<&ScaleStage> {
        Self::require(&self.scale, "scale")
    }

    pub fn eta_stage(&self) -> Result<&EtaStage> {
        Self::require(&self.eta, "eta")
    }

    pub fn pdf_stage(&self) -> Result<&PdfStage> {
        Self::require(&self.pdf, "pdf")
    }

    pub fn profitability_stage(&self) -> Result<&ProfitabilityStage> {
        Self::require(&self.profitability, "profitability")
    }

    /// Records panel metadata and fits the yearly trends.
    pub fn run_trend(&mut self, panel: &Panel, rejections: &RejectionReport) -> Result<()> {
        self.panel = Some(panel.metadata(rejections));
        let cfg = &self.config;
        let base_year = cfg.trend_base_year.unwrap_or(panel.year_min());
        let yearly = yearly_means(panel);
        let trend_excluded = if cfg.trend_exclude_anomalous {
            cfg.anomalous_years.clone()
        } else {
            BTreeSet::new()
        };
        let revenue_trend = fit_exponential(&revenue_series(&yearly), base_year, &trend_excluded)?;

        let profits = profit_series(&yearly);
        let profit_trend = match fit_exponential_fixed_rate(
            &profits,
            base_year,
            revenue_trend.efold_years,
            &cfg.anomalous_years,
        ) {
            Ok(t) => Some(t),
            Err(e) => {
                self.warnings.push(format!("profit trend not fitted: {e}"));
                None
            }
        };
        let flagged_years = profit_trend
            .as_ref()
            .map(|t| flag_anomalous(&profits, t, cfg.anomaly_threshold))
            .unwrap_or_default();
        let proportionality = match fit_proportionality(&yearly, &cfg.anomalous_years) {
            Ok(p) => Some(p),
            Err(e) => {
                self.warnings.push(format!("profit/revenue proportionality not fitted: {e}"));
                None
            }
        };
        self.trend = Some(TrendStage {
            base_year,
            yearly,
            revenue_trend,
            profit_trend,
            proportionality,
            flagged_years,
        });
        Ok(())
    }

    pub fn run_scale(&mut self, panel: &Panel) -> Result<()> {
        let trend = &self.trend_stage()?.revenue_trend;
        let excluded = if self.config.scaling_exclude_anomalous {
            self.config.anomalous_years.clone()
        } else {
            BTreeSet::new()
        };
        let points = scale_panel(panel, trend)
            .into_iter()
            .filter(|p| !excluded.contains(&p.year))
            .collect();
        self.scale = Some(ScaleStage { points, excluded_years: excluded });
        Ok(())
    }

    pub fn run_eta(&mut self) -> Result<()> {
        let points = &self.scale_stage()?.points;
        let cfg = &self.config;
        let search = eta_search(points, cfg.gamma_g_init, &cfg.eta_search)?;
        let series = fluctuations(points, search.gamma_g_tuned, search.eta_star, cfg.eta_search.r_floor)?;
        if search.multiple_minima {
            self.warnings.push("variance objective has several separated minima".into());
        }
        if series.n_below_floor > 0 {
            self.warnings.push(format!("{} points below the r floor were skipped", series.n_below_floor));
        }
        self.eta = Some(EtaStage {
            gamma_g: search.gamma_g_tuned,
            eta: search.eta_star,
            search,
            series,
        });
        Ok(())
    }

    pub fn run_pdf(&mut self) -> Result<()> {
        let eta = self.eta_stage()?;
        let points = &self.scale_stage()?.points;
        let cfg = &self.config;

        let rs: Vec<f64> = points.iter().map(|p| p.r).filter(|r| *r > 0.0).collect();
        let revenue_pdf = empirical_pdf(&rs, Binning::Log, cfg.revenue_bins)?;
        let revenue_fit = fit_revenue_pdf(&revenue_pdf, cfg.revenue_r_min)?;

        let eps = eta.series.epsilons();
        let (lo, hi) = cfg.fluctuation_range;
        let fluctuation_pdf = empirical_pdf_in_range(&eps, Binning::Linear, cfg.fluctuation_bins, lo, hi)?;
        let mut warnings = Vec::new();
        let tail_fit = match fit_fluctuation_pdf(&fluctuation_pdf, &cfg.tail_fit) {
            Ok(f) => {
                if f.tail_power_at_bound {
                    warnings.push("fitted tail power sits at its bound".to_string());
                }
                Some(f)
            }
            Err(e) => {
                warnings.push(format!("fluctuation density fit failed: {e}"));
                None
            }
        };
        let hill = hill_tail_exponent(&eps, cfg.hill_k_fraction)?;
        let alpha = hill.alpha();
        let levy_like = hill.power_law_tails() && alpha > 0.0 && alpha < 2.0;

        let half = fluctuations(points, eta.gamma_g, 0.5, cfg.eta_search.r_floor)?;
        let dpi: Vec<f64> = half.entries.iter().map(|e| e.dpi).collect();
        let gaussian_sigma = variance(&dpi).sqrt();

        self.warnings.extend(warnings);
        self.pdf = Some(PdfStage {
            revenue_pdf,
            revenue_fit,
            fluctuation_pdf,
            tail_fit,
            hill,
            levy_like,
            gaussian_sigma,
        });
        Ok(())
    }

    pub fn run_profitability(&mut self) -> Result<()> {
        let cfg = &self.config;
        let eta = self.eta_stage()?;
        let pdf = self.pdf_stage()?;
        let trend = self.trend_stage()?;
        let fit = pdf.tail_fit.clone().ok_or_else(|| {
            Error::domain("the fluctuation density fit is required for profitability")
        })?;
        let alpha = match cfg.alpha_source {
            AlphaSource::Hill => pdf.hill.alpha(),
            AlphaSource::TailFit => fit.alpha,
            AlphaSource::InverseEta => 1.0 / eta.eta,
        };
        let density = FluctuationDensity::PowerTail(NormalizedTailDensity::new(fit)?);
        let model = ProfitabilityModel::new(eta.gamma_g, eta.series.mean_abs_dpi, alpha, density, cfg.eps_cut)?;
        let gaussian_model = ProfitabilityModel::gaussian(eta.gamma_g, pdf.gaussian_sigma, cfg.eps_cut)?;

        let mut series = eta.series.clone();
        if cfg.profitability_exclude_anomalous {
            series.entries.retain(|e| !cfg.anomalous_years.contains(&e.year));
        }
        let bins = empirical_profitability(&series, cfg.profitability_bins, cfg.min_bin_count)?;
        let centers: Vec<f64> = bins.iter().map(|b| b.r_bin_center).collect();
        let levy_at_bins = model.p_pf_curve(&centers, Default::default())?;
        let gaussian_at_bins = gaussian_model.p_pf_curve(&centers, Default::default())?;
        let rms = |pred: &[f64]| {
            let (mut ss, mut n) = (0.0, 0usize);
            for (b, p) in bins.iter().zip(pred) {
                if !b.low_count {
                    ss += (b.fraction - p).powi(2);
                    n += 1;
                }
            }
            if n == 0 {
                f64::NAN
            } else {
                (ss / n as f64).sqrt()
            }
        };
        let rms_levy = rms(&levy_at_bins);
        let rms_gaussian = rms(&gaussian_at_bins);

        let grid = log_grid(cfg.curve_range.0, cfg.curve_range.1, cfg.curve_points);
        let levy = model.p_pf_curve(&grid, Default::default())?;
        let gauss = gaussian_model.p_pf_curve(&grid, Default::default())?;
        let curve = grid
            .iter()
            .zip(levy.iter().zip(&gauss))
            .map(|(&r, (&levy, &gaussian))| CurvePoint { r, levy, gaussian })
            .collect();

        let r0_forecast = cfg.r0_forecast.unwrap_or_else(|| {
            let last = trend.yearly.iter().map(|m| m.year).max().unwrap_or(trend.base_year);
            trend.revenue_trend.value_at(last + 1)
        });
        let revenues = log_grid(cfg.absolute_range.0, cfg.absolute_range.1, cfg.absolute_points);
        let absolute = predict_absolute(&model, r0_forecast, &revenues)?;
        let absolute_gaussian = predict_absolute(&gaussian_model, r0_forecast, &revenues)?;

        let mut warnings = Vec::new();
        if !(rms_gaussian > rms_levy) {
            warnings.push(format!(
                "normal baseline fits the profitable fractions no worse than the heavy-tail model (rms {rms_gaussian:.4} vs {rms_levy:.4})"
            ));
        }
        self.profitability = Some(ProfitabilityStage {
            alpha_source: cfg.alpha_source,
            model,
            gaussian_model,
            bins,
            levy_at_bins,
            gaussian_at_bins,
            rms_levy,
            rms_gaussian,
            curve,
            r0_forecast,
            absolute,
            absolute_gaussian,
        });
        self.warnings.extend(warnings);
        Ok(())
    }

    /// Runs every stage after ingest on `panel`.
    pub fn analyze(
        config: RunConfig,
        panel: &Panel,
        rejections: &RejectionReport,
    ) -> std::result::Result<Self, PipelineError> {
        config.validate().map_err(|e| PipelineError::new(Stage::Config, e, None))?;
        let mut report = Self::new(config);
        let steps: [StageStep<'_>; 5] = [
            (Stage::Trend, &|r: &mut Self| r.run_trend(panel, rejections)),
            (Stage::Scale, &|r: &mut Self| r.run_scale(panel)),
            (Stage::Eta, &|r: &mut Self| r.run_eta()),
            (Stage::Pdf, &|r: &mut Self| r.run_pdf()),
            (Stage::Profitability, &|r: &mut Self| r.run_profitability()),
        ];
        for (stage, step) in steps {
            if let Err(e) = step(&mut report) {
                return Err(PipelineError::new(stage, e, Some(Box::new(report))));
            }
        }
        Ok(report)
    }
}

/// A stage failure, carrying whatever the earlier stages produced.
#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
    pub partial: Option<Box<AnalysisReport>>,
}

impl PipelineError {
    pub fn new(stage: Stage, source: Error, partial: Option<Box<AnalysisReport>>) -> Self {
        Self { stage, source, partial }
    }
}

/// Reads `config.input` and runs the whole analysis.
pub fn run_pipeline(config: RunConfig) -> std::result::Result<AnalysisReport, PipelineError> {
    config.validate().map_err(|e| PipelineError::new(Stage::Config, e, None))?;
    let path = config
        .input
        .clone()
        .ok_or_else(|| PipelineError::new(Stage::Config, Error::domain("no input file given"), None))?;
    let (panel, rejections) = File::open(&path)
        .map_err(Error::from)
        .and_then(|f| ingest(f, &config.ingest))
        .map_err(|e| PipelineError::new(Stage::Ingest, e, None))?;
    AnalysisReport::analyze(config, &panel, &rejections)
}
