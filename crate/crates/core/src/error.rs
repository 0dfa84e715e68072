use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Every failure mode of the estimation pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("bandwidth too small for the noise level: sigma^2/(2h^2) = {exponent:.3} exceeds 700")]
    OverflowRisk { exponent: f64 },

    #[error("need at least 50 replicate pairs to estimate the error characteristic function, got {found}")]
    InsufficientReplicates { found: usize },

    #[error("all truncated kernel weights vanish at t = {t}")]
    AllWeightsZero { t: f64 },

    #[error("covariate column {column} is constant")]
    DegenerateCovariate { column: usize },

    #[error("power-series basis of dimension {k} needs degree {degree}, above the limit of 20")]
    BasisOverflow { k: usize, degree: usize },

    #[error("invalid basis specification: {0}")]
    InvalidBasis(String),

    #[error("criterion argument outside its domain at observation {index} (v = {value})")]
    DomainViolation { index: usize, value: f64 },

    #[error("var(S) = {var_s:.6} does not exceed the error variance {var_u:.6} (NoiseExceedsSignal)")]
    NoiseExceedsSignal { var_s: f64, var_u: f64 },

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("tuning failed: {0}")]
    TuningFailed(String),

    #[error("{skipped} of {total} in-range grid points were skipped (limit 20%)")]
    TooManySkipped { skipped: usize, total: usize },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
