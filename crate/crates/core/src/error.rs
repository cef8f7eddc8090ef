use thiserror::Error;

/// One malformed input row; `line` counts the header as line 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIssue {
    pub line: usize,
    pub message: String,
}

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CeaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("inconsistent switcher history: {0}")]
    InconsistentHistory(String),

    #[error("covariate dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dataset has no events")]
    NoEvents,

    #[error("stratum {0} has no records")]
    EmptyStratum(usize),

    #[error("information matrix is singular (collinear or constant covariates)")]
    SingularInformation,

    #[error("Newton iteration did not converge after {iterations} iterations (max |score| = {max_score:.3e})")]
    Diverged {
        iterations: usize,
        max_score: f64,
        last_beta: Vec<f64>,
    },

    #[error("time {t} precedes conditioning time {from}")]
    Domain { t: f64, from: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("survival at conditioning time {at} is zero")]
    DegenerateConditioning { at: f64 },

    #[error("ICER denominator {diff:.3e} is below the floor (mu1 = {mu1}, muj = {muj})")]
    DegenerateDenominator { mu1: f64, muj: f64, diff: f64 },

    #[error("variance is not available for continuous delay distributions")]
    UnsupportedVariance,

    #[error("no closed form for this design: {0}")]
    NoClosedForm(String),

    #[error("{} malformed row(s); first at line {}: {}", .0.len(), .0[0].line, .0[0].message)]
    Rows(Vec<RowIssue>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CeaError {
    fn from(err: std::io::Error) -> Self {
        CeaError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CeaError>;
