//! Profit fluctuation analysis for company panels: exponential detrending,
//! revenue-scaled fluctuations, heavy-tail density fits, break-even
//! probability of profitability, and a synthetic panel generator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cvp;
pub mod dist;
pub mod error;
pub mod panel;
pub mod pipeline;
pub mod profitability;
pub mod quad;
pub mod scaling;
mod serde_inf;
pub mod series;
pub mod stats;
pub mod synth;
pub mod trend;

pub use cvp::{bound_report, BoundReport, CvpParams};
pub use dist::{
    fit_fluctuation_pdf, fit_revenue_pdf, hill_tail_exponent, EmpiricalPdf, FluctuationDensity,
    HillEstimate, RevenuePdfFit, TailFit,
};
pub use error::{Error, Result};
pub use panel::{ingest, CompanyYearRecord, IngestConfig, Panel, RejectionReport, YearlyMean};
pub use pipeline::{run_pipeline, AnalysisReport, PipelineError, RunConfig, Stage};
pub use profitability::{p_pf_gaussian, ProfitabilityModel, TailMode};
pub use scaling::{eta_search, scale_panel, EtaObjective, EtaSearchConfig, EtaSearchResult, ScaledSeries};
pub use series::{emit_series, FigureId};
pub use synth::{generate_panel, GeneratorSpec, GroundTruth, NoiseLaw};
pub use trend::{fit_exponential, TrendFit};
