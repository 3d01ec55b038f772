use thiserror::Error;

use crate::calibration::FitDiagnostics;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("value {value} outside of range [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },

    #[error("channel conflict: {0}")]
    Conflict(String),

    #[error("signal contrast {contrast:.3e} below floor {floor:.3e}")]
    LowSignal { contrast: f64, floor: f64 },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("fit failed: {reason}")]
    FitFailure {
        reason: String,
        diagnostics: Box<FitDiagnostics>,
    },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("scan range excludes resonance: {0}")]
    Range(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input or configuration, as opposed
    /// to numerical trouble during a run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Configuration(_)
                | Error::OutOfRange { .. }
                | Error::Conflict(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be finite, got {value}")))
    }
}
