use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected} values, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("domain error at point {index}: {message}")]
    Domain { index: usize, message: String },

    #[error("instability at t = {time}: {message}")]
    Instability { time: f64, message: String },

    #[error("box constraint violated at t = {time}, point {index} (x = {coord:?}): {message}")]
    BoxViolation {
        time: f64,
        index: usize,
        coord: Vec<f64>,
        message: String,
    },

    #[error("linear solve did not converge after {iterations} iterations (relative residual {residual:e})")]
    LinearSolve { iterations: usize, residual: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("front not found: {0}")]
    FrontNotFound(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical solvers, as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::Instability { .. }
                | Error::BoxViolation { .. }
                | Error::LinearSolve { .. }
                | Error::Convergence { .. }
                | Error::Domain { .. }
                | Error::FrontNotFound(_)
                | Error::InsufficientData(_)
        )
    }
}
