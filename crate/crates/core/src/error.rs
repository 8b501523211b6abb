//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad generation or run configuration (zero horizon, no classes, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A value violates a documented invariant.
    #[error("validation error: field `{field}`: {message}")]
    Validation { field: String, message: String },

    /// A document does not follow the scenario/task schema.
    #[error("schema error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Schema { line: Option<usize>, message: String },

    /// A query argument is outside the valid range (e.g. time past the horizon).
    #[error("range error: {0}")]
    Range(String),

    /// Evaluation requested outside the objective's domain (utilization at or
    /// past the barrier).
    #[error("domain error: {0}")]
    Domain(String),

    /// No strictly feasible interior point exists for the instance.
    #[error("infeasible instance: {0}")]
    Infeasible(String),

    /// The inner solver hit its iteration cap.
    #[error("solver did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },

    /// Malformed call (bad k, mismatched dimensions, unknown metric name).
    #[error("argument error: {0}")]
    Argument(String),

    /// Registry persistence failure.
    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),

    /// A worker evaluator failed on a prompt.
    #[error("worker evaluation failed for prompt {prompt_id}: {message}")]
    Evaluation { prompt_id: String, message: String },
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}
