use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by front ends to map errors onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transition matrix is not stable (spectral radius {radius:.6} >= 1)")]
    NotStationary { radius: f64 },

    #[error("fixed-point iteration did not converge after {iterations} steps (last change {last_change:.3e})")]
    NonConvergence { iterations: usize, last_change: f64 },

    #[error("numerical singularity: {0}")]
    NumericalSingularity(String),

    #[error("panel too short: need at least {needed} periods, got {got}")]
    PanelTooShort { needed: usize, got: usize },

    #[error("rank {rank} exceeds the maximum admissible rank {max}")]
    RankTooLarge { rank: usize, max: usize },

    #[error("residual covariance is not positive definite (increase the simulation length or the shrinkage)")]
    SingularOmega,

    #[error("no residuals supplied")]
    EmptyResiduals,

    #[error("inconsistent horizon: {0}")]
    InconsistentHorizon(String),

    #[error("normalising product F*J is zero")]
    ZeroDenominator,

    #[error("spectral density is singular at frequency index {index}; add measurement error or jitter")]
    SingularSpectrum { index: usize },

    #[error("initial parameter vector has no finite likelihood: {0}")]
    InitInvalid(String),

    #[error("generator failure: {0}")]
    GeneratorFailure(String),

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Parse { .. } | Error::Config(_) | Error::InvalidArgument(_) => ErrorKind::Config,
            Error::DimensionMismatch(_) => ErrorKind::Config,
            _ => ErrorKind::Numerical,
        }
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
