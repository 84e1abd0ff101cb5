//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had the wrong size for the operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Model construction or validation failed.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A scalar parameter violated its domain.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A required input field was absent.
    #[error("missing required field: {0}")]
    MissingField(&'static str),

    /// Time steps must be strictly positive.
    #[error("nonpositive time step: {0}")]
    NonpositiveDelta(f64),

    /// Simulation or filtering produced NaN/inf state.
    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    /// The innovation covariance C P C^T + R could not be factorized.
    #[error("innovation covariance is not invertible")]
    SingularInnovation,

    /// The stability bound theory requires a contractive drift map.
    #[error("drift not contractive; bound theory inapplicable (L_f = {0})")]
    NotContractive(f64),

    /// Wrapper attaching the step index at which a filter error occurred.
    #[error("at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// Wrapper naming the Monte Carlo run in which an error occurred.
    #[error("run {run}: {source}")]
    RunFailed {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach a step index to an error propagating out of a per-step loop.
    pub fn at_step(self, step: usize) -> Error {
        match self {
            // Already carries its own index.
            e @ Error::NonFiniteState { .. } | e @ Error::AtStep { .. } => e,
            other => Error::AtStep {
                step,
                source: Box::new(other),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
