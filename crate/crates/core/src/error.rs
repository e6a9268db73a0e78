use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by model construction and numerical routines.
///
/// The variants are grouped so a front end can map them onto exit codes:
/// the first group is invalid input, [`Error::Budget`] and
/// [`Error::Infeasible`] are resource/feasibility failures, and
/// [`Error::Numerical`] is a failure of an otherwise valid computation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("index {index} out of range for kappa = {kappa}")]
    IndexOutOfRange { index: usize, kappa: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
