use thiserror::Error;

use crate::ec::IterationTrace;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("denoiser selection failed: {0}")]
    Selection(String),

    #[error("{0}")]
    Solver(Box<SolverFailure>),

    #[error("diverged after {iterations} iterations: {reason}")]
    Divergence {
        iterations: usize,
        reason: String,
        /// Per-iteration `(vbar1, vbar2, vhat1, vhat2)`.
        trace: Vec<[f64; 4]>,
    },

    #[error("connection error: {0}")]
    Connection(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("remote error: {0}")]
    Remote(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A non-finite state detected inside the solver loop. Carries the trace of
/// every completed iteration so callers can still export it.
#[derive(Debug)]
pub struct SolverFailure {
    pub iteration: usize,
    pub step: &'static str,
    pub trace: IterationTrace,
}

impl std::fmt::Display for SolverFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "non-finite state at iteration {} ({})",
            self.iteration, self.step
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
