use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data for {what}: need {needed}, got {got}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    /// Zero growth rate: the e-folding time is unbounded.
    #[error("series is flat; exponential growth time is unbounded")]
    DegenerateFlat,

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("optimizer did not converge after {iterations} iterations (cost {cost:.6e})")]
    NonConvergence {
        iterations: usize,
        cost: f64,
        best: Vec<f64>,
    },

    #[error("quadrature failed on [{lower}, {upper}]: estimate {estimate:.6e}, error {error:.3e}")]
    Quadrature {
        lower: f64,
        upper: f64,
        estimate: f64,
        error: f64,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("stage `{0}` has not been run")]
    MissingStage(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
