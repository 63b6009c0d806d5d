use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Config,
    Ingest,
    Prior,
    Baseline,
    Protect,
    Attack,
    Metrics,
    Utility,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(&self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Internal => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {message}")]
pub struct CliError {
    pub stage: Stage,
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            stage: Stage::Config,
            kind: ErrorKind::Config,
            message: message.into(),
        }
    }

    pub fn data(stage: Stage, message: impl Into<String>) -> Self {
        Self {
            stage,
            kind: ErrorKind::Data,
            message: message.into(),
        }
    }

    pub fn internal(stage: Stage, message: impl Into<String>) -> Self {
        Self {
            stage,
            kind: ErrorKind::Internal,
            message: message.into(),
        }
    }

    /// Maps a library error raised in `stage`: I/O problems are internal,
    /// everything else is about the data.
    pub fn from_core(stage: Stage, e: geopriv_core::Error) -> Self {
        match e {
            geopriv_core::Error::Io(_) => Self::internal(stage, e.to_string()),
            _ => Self::data(stage, e.to_string()),
        }
    }

    pub fn io(stage: Stage, e: std::io::Error) -> Self {
        Self::internal(stage, e.to_string())
    }
}
