use thiserror::Error;

/// Errors surfaced by the sensing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("scene generation failed: {0}")]
    SceneGeneration(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("coordinate outside the delay window: {0}")]
    OutOfWindow(String),
    #[error("invalid grid coordinate: {0}")]
    InvalidCoordinate(String),
    #[error("geometric singularity: {0}")]
    Singularity(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error("dataset format: {0}")]
    Dataset(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
