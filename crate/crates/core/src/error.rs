use thiserror::Error;

use crate::quadrature::NonConvergence;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} must be {expected}, got {value}")]
    Domain {
        what: &'static str,
        expected: &'static str,
        value: f64,
    },

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("quadrature for {what} did not converge: error {achieved:e} > requested {requested:e}")]
    Quadrature {
        what: &'static str,
        estimate: f64,
        achieved: f64,
        requested: f64,
    },

    #[error("unknown shape function `{0}` (expected raised_cosine or quartic_bump)")]
    UnknownShape(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("bound violated at {} place(s); first: {}", .0.len(), .0.first().map(String::as_str).unwrap_or("-"))]
    BoundViolation(Vec<String>),

    #[error("AMP diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("sensing matrix is already augmented")]
    AlreadyAugmented,

    #[error("sensing matrix is not augmented")]
    NotAugmented,

    #[error("malformed matrix container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn quadrature(what: &'static str, nc: NonConvergence) -> Self {
        Error::Quadrature {
            what,
            estimate: nc.estimate,
            achieved: nc.achieved,
            requested: nc.requested,
        }
    }
}
