use thiserror::Error;

use crate::autoencoder::TrainLog;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("mixing generation failed after {attempts} attempts (best condition number {best_condition:.3})")]
    GenerationFailed { attempts: usize, best_condition: f64 },

    #[error("training failed at epoch {epoch}: {reason}")]
    TrainingFailed {
        epoch: usize,
        reason: String,
        log: Box<TrainLog>,
    },

    #[error("invalid report: {0}")]
    ReportInvalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::GenerationFailed { .. } | Error::TrainingFailed { .. }
        )
    }
}
