use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("insufficient matches: need at least {needed}, got {got}")]
    InsufficientMatches { needed: usize, got: usize },

    #[error("insufficient elements: need at least {needed}, got {got}")]
    InsufficientElements { needed: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate problem: {0}")]
    DegenerateProblem(String),

    #[error("unsupported schema: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
