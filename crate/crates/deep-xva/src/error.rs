//! Error type shared across the library.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// A precondition on an argument was violated (bad dimension, shape
    /// mismatch, nonpositive quantity, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Correlation matrix is not positive semi-definite within tolerance.
    #[error("correlation matrix is not positive semi-definite: pivot {pivot} at index {index}")]
    NotPositiveSemiDefinite { index: usize, pivot: f64 },

    /// Training loss became non-finite or exceeded the divergence guard.
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    TrainingDiverged { iteration: usize, loss: f64 },

    /// An operation required trained artifacts that are not present.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Diffusion matrix diag(sigma_i * x_i) is singular (zero price or vol).
    #[error("singular diffusion at path {path}, node {node}, asset {asset}")]
    SingularDiffusion {
        path: usize,
        node: usize,
        asset: usize,
    },

    /// Serialized artifact could not be read back.
    #[error("deserialization failed: {0}")]
    Deserialize(String),

    /// Serialized artifact has an unsupported format version.
    #[error("incompatible format: expected magic {expected:?}, found {found:?}")]
    VersionMismatch { expected: String, found: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
