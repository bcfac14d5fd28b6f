//! Error type shared across the pipeline.

use thiserror::Error;

/// Everything that can go wrong between raw log bytes and an alert stream.
#[derive(Debug, Error)]
pub enum HopperError {
    /// A log line that could not be parsed, with its 1-based line number.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Invalid configuration value or unknown key.
    #[error("config: {0}")]
    Config(String),

    /// Inventory inconsistency (duplicate ids, missing owner, bad cross-reference).
    #[error("inventory: {0}")]
    Inventory(String),

    /// Input that violates an operation's preconditions (bad window, unknown victim, ...).
    #[error("validation: {0}")]
    Validation(String),

    /// Recursive path tracing exceeded the caller's depth limit.
    #[error("path tracing exceeded depth limit {0}")]
    DepthLimit(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HopperError {
    /// Whether the error is the caller's fault (maps to exit code 2 in the CLI).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            HopperError::Parse { .. }
                | HopperError::Config(_)
                | HopperError::Inventory(_)
                | HopperError::Validation(_)
        )
    }
}
