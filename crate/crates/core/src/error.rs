use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the region where an operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A constructed object would break one of its invariants.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("fixed-point solver did not converge at z = {z} after {iterations} iterations (last residual {residual:e})")]
    Convergence {
        z: String,
        iterations: usize,
        residual: f64,
    },

    #[error("singular derivative at z = {z}: |1 - r m^2 S2| = {modulus:e}")]
    SingularDerivative { z: String, modulus: f64 },

    #[error("edge finding failed: {reason} (scanned bracket [{lo}, {hi}])")]
    EdgeFinding { reason: String, lo: f64, hi: f64 },

    #[error("near-singular denominator |1 + sigma m| = {modulus:e} at xi = {xi}")]
    NearSingular { xi: String, modulus: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("replicate {index} failed: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("usage error for key `{key}`: {message}")]
    Usage { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Usage {
            key: key.into(),
            message: message.into(),
        }
    }
}
