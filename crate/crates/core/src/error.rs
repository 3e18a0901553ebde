use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the engine. The CLI maps each variant to a category
/// code on stderr.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("duplicate location at ({x}, {y})")]
    DuplicateLocation { x: f64, y: f64 },

    #[error("degenerate area {id}: rejection acceptance rate below 1e-6")]
    DegenerateArea { id: String },

    #[error("matrix is not positive definite after jitter escalation (last jitter {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("singular neighbor covariance at ordering position {position}")]
    SingularConditioning { position: usize },

    #[error("invalid covariates for response {response}: {reason}")]
    InvalidCovariates { response: usize, reason: String },

    #[error("non-finite linear predictor in response {response}")]
    NonFiniteLikelihood { response: usize },

    #[error("internal consistency: {0}")]
    Internal(String),

    #[error("sampler health: {reason}")]
    SamplerHealth { reason: String, divergences: usize, draws: usize },

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("data error in {path}:{line}: {message}")]
    Data { path: PathBuf, line: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short category tag used in CLI diagnostics and exit codes.
    pub fn category(&self) -> (&'static str, i32) {
        match self {
            Error::Config { .. } => ("config", 2),
            Error::Data { .. } => ("data", 3),
            Error::Io { .. } => ("io", 4),
            Error::SamplerHealth { .. } | Error::Initialization(_) => ("sampler", 5),
            Error::InvalidArgument(_)
            | Error::DuplicateLocation { .. }
            | Error::DegenerateArea { .. }
            | Error::InvalidCovariates { .. } => ("input", 6),
            _ => ("numeric", 7),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
