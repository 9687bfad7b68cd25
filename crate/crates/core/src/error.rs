use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An index or table shape does not match the environment.
    #[error("input error: {0}")]
    Input(String),

    /// A configuration or precondition violation detected before running.
    #[error("configuration error: {0}")]
    Config(String),

    /// The adversarial corruption construction has no state with positive
    /// probability gap.
    #[error("construction infeasible: {0}")]
    Infeasible(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// Exact enumeration would exceed the configured term budget.
    #[error("enumeration of {terms} terms exceeds the limit of {limit}")]
    Size { terms: u64, limit: u64 },

    /// A runtime invariant failed during training.
    #[error("invariant violated ({invariant}): {detail}")]
    Invariant {
        invariant: &'static str,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
