use std::path::PathBuf;

use thiserror::Error;

use crate::net::MlpModel;
use crate::systems::Trajectory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A generated or rolled-out trajectory left the finite range. `partial`
    /// holds every state up to and including the last finite one.
    #[error("diverged at step {step}")]
    Divergence {
        step: usize,
        partial: Option<Box<Trajectory>>,
    },

    /// One member of a parallel ensemble diverged.
    #[error("trajectory {trajectory} diverged at step {step}")]
    EnsembleDivergence { trajectory: usize, step: usize },

    /// Non-finite loss or gradients during optimisation. Carries the best
    /// checkpoint seen before the failure.
    #[error("training diverged at epoch {epoch}: {reason}")]
    TrainingDiverged {
        epoch: usize,
        reason: String,
        last_finite: Option<Box<MlpModel>>,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. }
                | Error::EnsembleDivergence { .. }
                | Error::TrainingDiverged { .. }
        )
    }
}
