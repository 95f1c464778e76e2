use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("time step too large: {0}")]
    StepSize(String),

    #[error("grid too narrow: boundary amplitude ratio {ratio:.3e} exceeds {limit:.1e}")]
    GridTooNarrow { ratio: f64, limit: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact(s) in {dir}: {names:?}")]
    MissingArtifact { dir: PathBuf, names: Vec<String> },

    #[error("unknown particle `{0}`")]
    UnknownParticle(String),

    #[error("unknown pipeline `{0}`")]
    UnknownPipeline(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
