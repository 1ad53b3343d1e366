use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulation kernels, engines and persistence layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is indefinite (min eigenvalue {min_eigenvalue:e})")]
    Indefinite { min_eigenvalue: f64 },

    #[error("horizon {horizon} is shorter than one SGD step of {step}")]
    HorizonTooShort { horizon: f64, step: f64 },

    #[error("diffusion square root failed at step {step}, particle {particle}: {source}")]
    Diffusion {
        step: usize,
        particle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("moment guard tripped at t = {time}: second moment {moment:e} exceeds ceiling {ceiling:e}")]
    MomentCeiling {
        time: f64,
        moment: f64,
        ceiling: f64,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("checksum mismatch in {0}")]
    Checksum(PathBuf),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
