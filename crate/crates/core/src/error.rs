//! Error type shared across the pipeline.
//!
//! The split matters for the CLI: [`Error::InvalidInput`], [`Error::Parse`]
//! and [`Error::Config`] map to exit code 2 (caller mistake), everything else
//! to exit code 3 (runtime failure).

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on user-supplied data was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// Two pipeline stages disagree about shared state (seeds, shapes, ids).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A structured file failed to parse; `line` is 1-based where known.
    #[error("parse error in {path}{}: {msg}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Parse {
        path: String,
        line: Option<usize>,
        msg: String,
    },

    /// An optimization run hit a non-finite loss and stopped; the last good
    /// checkpoint (if any was written) is named so the run can be resumed.
    #[error("run aborted: {msg}")]
    Aborted {
        msg: String,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors the CLI should report as usage problems (exit 2).
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_) | Error::Config(_) | Error::Parse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
