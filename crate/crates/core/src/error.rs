use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive definite: pivot {pivot} has value {value:e}")]
    Factorization { pivot: usize, value: f64 },

    #[error("numerical failure in {context} at iteration {iteration}")]
    NumericalFailure { context: &'static str, iteration: usize },

    #[error("no sign change in search interval: residual {lo_residual:e} at lower end, {hi_residual:e} at upper end")]
    Bracketing { lo_residual: f64, hi_residual: f64 },

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("column `{0}` not found in csv header")]
    MissingColumn(String),

    #[error("non-numeric value `{value}` at line {line}, column `{column}`")]
    NonNumeric { line: usize, column: String, value: String },

    #[error("label `{value}` at line {line} is not one of -1, 0, 1")]
    UnmappableLabel { line: usize, value: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
