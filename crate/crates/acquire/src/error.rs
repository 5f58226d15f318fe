use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected dim={expected}, got dim={got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("cosine loss requires unit-norm vectors (got norm {norm})")]
    NonUnitNorm { norm: f64 },

    #[error("matrix is not symmetric positive-definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid loss parameters: {0}")]
    InvalidLoss(String),

    #[error("alignment is undefined across loss families ({left} vs {right})")]
    CrossFamily { left: &'static str, right: &'static str },

    #[error("accumulated curvature matrix is singular")]
    SingularCovariance,

    #[error("refit did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("service set is empty")]
    EmptyServiceSet,

    #[error("unknown user id {0}")]
    UnknownUser(usize),

    #[error("k={k} out of range for n={n}")]
    KOutOfRange { k: usize, n: usize },

    #[error("instance too large for enumeration: n={n}, k={k}")]
    InstanceTooLarge { n: usize, k: usize },

    #[error("empty cluster or group")]
    EmptyCluster,

    #[error("negative loss entry {value} at index {index}")]
    NegativeLoss { index: usize, value: f64 },

    #[error("rank-deficient feature matrix")]
    RankDeficient,

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for errors caused by bad input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::DimensionMismatch { .. }
            | Error::NonUnitNorm { .. }
            | Error::NotPositiveDefinite(_)
            | Error::InvalidLoss(_)
            | Error::CrossFamily { .. }
            | Error::UnknownUser(_)
            | Error::KOutOfRange { .. }
            | Error::InstanceTooLarge { .. }
            | Error::EmptyCluster
            | Error::NegativeLoss { .. } => true,
            Error::Context { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
