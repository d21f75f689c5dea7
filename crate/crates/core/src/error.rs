//! Error types shared across the workspace.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An API contract was broken by the caller (shape or dimension
    /// mismatches between values that must agree).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Data fed into an operation is unusable (non-finite values, empty
    /// sample sets, out-of-range pixels).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Capacity-matching arithmetic has no integer solution.
    #[error("infeasible budget: {0}")]
    InfeasibleBudget(String),

    /// A persisted file could not be decoded.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {message}")]
    Diverged { step: u64, message: String },

    /// A configuration file or flag combination is invalid.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code the CLI maps this error to: 2 for divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Diverged { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
