use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("alignment error: source has {source_lines} lines, target has {target_lines}")]
    Alignment {
        source_lines: usize,
        target_lines: usize,
    },

    #[error("encoding error: {path}: line {line} is not valid UTF-8")]
    Encoding { path: PathBuf, line: usize },

    #[error("empty lines in {path} at line(s) {lines:?} (use --allow-empty to accept)")]
    EmptyLines { path: PathBuf, lines: Vec<usize> },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for command-line front ends: 2 for configuration
    /// and argument problems, 3 for data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) => 2,
            _ => 3,
        }
    }
}
