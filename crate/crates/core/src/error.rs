use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the simulator, controllers and harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation contract (dimension mismatch, bad index, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("unsupported cost: {0}")]
    UnsupportedCost(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    /// An episode failed inside an experiment run.
    #[error("episode failed (seed {seed}, controller {controller}): {source}")]
    Episode {
        seed: u64,
        controller: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(contract(format!("{what}: expected dimension {want}, got {got}")));
    }
    Ok(())
}
