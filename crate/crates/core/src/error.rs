//! Error types shared across the simulator.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates an operation precondition.
    #[error("configuration error: {0}")]
    Config(String),

    /// A parameter vector, batch, or distribution does not match the
    /// expected shape.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A non-finite value was produced where finite arithmetic is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A per-class operation was asked for a class with no samples.
    #[error("class {class} has no samples ({context})")]
    EmptyClass { class: usize, context: String },

    /// Auxiliary dataset construction needs samples of a class that is
    /// locally absent and cannot be synthesized.
    #[error("auxiliary construction: class {0} required but locally absent and unsynthesizable")]
    AuxClassUnavailable(usize),

    /// Malformed IDX file.
    #[error("IDX parse error at byte {offset}: {message}")]
    IdxParse { offset: u64, message: String },

    /// An API was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),

    /// A metric has no defined value for the given inputs.
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    /// Config validation produced one or more violations.
    #[error("invalid config: {0} violation(s); run `validate` for the full report")]
    Validation(usize),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach round context to an error propagating out of the training loop.
    pub fn in_round(self, round: usize) -> Error {
        match self {
            Error::Numeric(m) => Error::Numeric(format!("round {round}: {m}")),
            Error::Config(m) => Error::Config(format!("round {round}: {m}")),
            other => other,
        }
    }
}
