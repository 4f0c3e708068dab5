//! Harness error type, split by exit-code class: configuration and
//! manifest problems exit with 2, runtime failures with 3.

use std::path::PathBuf;

use protolearn_core::CoreError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn config(msg: impl std::fmt::Display) -> Self {
        HarnessError::Config(msg.to_string())
    }

    pub fn manifest(msg: impl std::fmt::Display) -> Self {
        HarnessError::Manifest(msg.to_string())
    }

    pub fn runtime(msg: impl std::fmt::Display) -> Self {
        HarnessError::Runtime(msg.to_string())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    /// Process exit code: 2 for config/manifest problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Manifest(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
