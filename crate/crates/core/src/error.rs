use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("point ({x}, {y}) lies outside the field extent")]
    OutOfExtent { x: f64, y: f64 },

    #[error("malformed grid file {path}: {reason}")]
    MalformedGrid { path: PathBuf, reason: String },

    #[error("covariance matrix is not positive definite (size {size})")]
    NotPositiveDefinite { size: usize },

    #[error("config error in {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },

    #[error("unknown strategy `{name}` in `{key}`")]
    UnknownStrategy { key: String, name: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
