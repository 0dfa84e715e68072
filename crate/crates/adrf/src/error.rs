use std::path::PathBuf;

use adrf_core::Error as CoreError;

/// Failures surfaced by the command-line tool, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    /// 2 for bad input, 3 for configuration and tuning, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io { .. } => 2,
            CliError::Config(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Classifies an error raised while choosing smoothing parameters.
    pub fn tuning(e: CoreError) -> Self {
        match input_kind(&e) {
            true => CliError::Input(e.to_string()),
            false => CliError::Config(e.to_string()),
        }
    }

    /// Classifies an error raised while estimating a curve or band.
    pub fn estimation(e: CoreError) -> Self {
        if input_kind(&e) {
            return CliError::Input(e.to_string());
        }
        match e {
            CoreError::NoiseExceedsSignal { .. }
            | CoreError::InvalidParameter(_)
            | CoreError::InvalidBasis(_)
            | CoreError::BasisOverflow { .. }
            | CoreError::TuningFailed(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

fn input_kind(e: &CoreError) -> bool {
    matches!(
        e,
        CoreError::InvalidSample(_) | CoreError::DegenerateCovariate { .. } | CoreError::InsufficientReplicates { .. }
    )
}
