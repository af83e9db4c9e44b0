use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at {location}")]
    NonFinite { location: String },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("configuration error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("laplacian of a {dim}-dimensional field exceeds the exact cap {cap}; opt into the Hutchinson estimator or raise the cap")]
    LaplacianCap { dim: usize, cap: usize },

    #[error("sinkhorn did not converge in {iterations} iterations (marginal violation {violation:.3e})")]
    SinkhornNotConverged { iterations: usize, violation: f64 },

    #[error("noise level {requested} differs from the training value {trained}; pass the override flag to proceed")]
    EpsMismatch { requested: f64, trained: f64 },

    #[error("file format error in {path:?}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn non_finite(location: impl Into<String>) -> Self {
        Error::NonFinite { location: location.into() }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
