//! Error taxonomy shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error type. Variants map onto the failure surfaces callers
/// need to tell apart: bad shapes, bad numbers, bad configuration, and IO.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between tensors, layers, or datasets.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// Non-finite values or numeric blowup detected mid-computation.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Training loss left the finite range; partial artifacts are kept.
    #[error("diverged at step {step}: {message}")]
    Diverged { step: usize, message: String },

    /// Invalid configuration. The message lists every violated field.
    #[error("invalid configuration:\n{0}")]
    Config(String),

    /// API misuse that is a programming error on the caller's side.
    #[error("usage: {0}")]
    Usage(String),

    /// Train/validation split cannot be honored (too few trajectories, or
    /// a fraction that leaves one side empty).
    #[error("split: {0}")]
    Split(String),

    /// Malformed text input (config files, CLI values).
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    /// A serialized artifact whose contents do not match its manifest.
    #[error("schema mismatch in {path}: {message}")]
    Schema { path: String, message: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for anything the user can fix in
    /// a config or command line, 3 for numeric divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Usage(_) | Error::Split(_) => 2,
            Error::Diverged { .. } => 3,
            _ => 1,
        }
    }
}
