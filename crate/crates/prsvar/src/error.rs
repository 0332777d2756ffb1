//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A constructed object violates one of its type invariants; the message
    /// names the offending check.
    #[error("validation failed: {0}")]
    Validation(String),

    /// Fixed-point iteration ran out of iterations.
    #[error("fixed point did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// A limiting law is degenerate (zero variance) where a caller required
    /// a proper one.
    #[error("degenerate limit: {0}")]
    DegenerateLimit(String),

    /// Input data is unusable (NaN, misaligned lengths, empty sample).
    #[error("data error: {0}")]
    Data(String),

    /// One simulation replication failed; carries the index and derived seed.
    #[error("replication {index} (seed {seed:#018x}) failed: {message}")]
    Replication {
        index: usize,
        seed: u64,
        message: String,
    },

    /// Configuration could not be parsed or resolved.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI contract: 2 for configuration problems,
    /// 3 for runtime/replication failures. Exit codes 0 and 1 are reserved
    /// for success and verification failure and never arise from an `Error`.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::Validation(_) => 2,
            Error::Replication { .. } | Error::Io(_) => 3,
            Error::NonConvergence { .. } | Error::DegenerateLimit(_) | Error::Data(_) => 3,
        }
    }
}
