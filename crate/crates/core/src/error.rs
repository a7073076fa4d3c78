use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate likelihood: normalizer {normalizer:e} below 1e-300 for observation {obs}")]
    DegenerateLikelihood { obs: usize, normalizer: f64 },

    #[error("demonstration {demo}: {reason}")]
    DemoMismatch { demo: usize, reason: String },

    #[error("vector is not one-hot: {0}")]
    NotOneHot(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("singular gram matrix (min eigenvalue {min_eigenvalue:e})")]
    SingularGram { min_eigenvalue: f64 },

    #[error("feature map needs {needed} columns but the stream has {available}")]
    Capacity { needed: usize, available: usize },

    #[error("encoder contract violated: {0}")]
    Encoder(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
