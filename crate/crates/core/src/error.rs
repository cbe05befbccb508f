use thiserror::Error;

use crate::entropy::ScalingFit;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A state vector contained non-finite entries.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A trajectory left the escape radius; the index is the iteration
    /// (counting burn-in) at which the threshold was first exceeded.
    #[error("trajectory escaped |coord| > {threshold:e} at iteration {iteration}")]
    Escape { iteration: usize, threshold: f64 },

    /// Two symbol sequences (or a sequence and an estimator) disagree on the
    /// alphabet.
    #[error("alphabet mismatch: {0}")]
    Alphabet(String),

    /// The scaling-ansatz fit ran out of iterations. The best iterate found
    /// so far is attached so callers can still inspect it.
    #[error("scaling fit did not converge after {iterations} iterations (best h_inf = {:.6})", best.h_inf)]
    FitDidNotConverge { iterations: usize, best: Box<ScalingFit> },

    /// The training loss became non-finite.
    #[error("training diverged at step {step}: {detail}")]
    TrainingDiverged { step: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
