use thiserror::Error;

/// Errors raised across the engine.
#[derive(Debug, Error)]
pub enum GarError {
    /// A precondition on caller-supplied input was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration key holds an unusable value.
    #[error("invalid config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// The policy cannot provide what was asked of it.
    #[error("policy error: {0}")]
    Policy(String),

    /// Exhaustive enumeration would exceed the configured budget.
    #[error("enumeration budget exceeded: {needed} > {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },

    /// The verifier endpoint could not be reached or the stream broke down.
    #[error("verifier transport error: {0}")]
    Transport(String),

    /// A wire message or repository record failed to parse.
    #[error("parse error: {0}")]
    Parse(String),

    /// A checkpoint is truncated, corrupt or written by another version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GarError>;

pub(crate) fn invalid(msg: impl Into<String>) -> GarError {
    GarError::InvalidInput(msg.into())
}
