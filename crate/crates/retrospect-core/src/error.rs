//! Error type shared across the engine.
//!
//! Variants are grouped by where they surface so the CLI can map them to
//! stable exit codes: configuration problems, stage failures, and backend
//! (transport) failures.

use std::path::Path;

use thiserror::Error;

/// Engine-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, task file, or fixture detected before any work ran.
    #[error("config error: {0}")]
    Config(String),

    /// A domain invariant was violated when constructing or validating a value.
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    /// Insert of an already-present (task_id, trial_index) key.
    #[error("duplicate pool key ({task_id}, {trial_index})")]
    DuplicateKey { task_id: String, trial_index: u32 },

    /// Template rendering failed.
    #[error("template error for role {role}: {detail}")]
    Template { role: String, detail: String },

    /// Structured model output could not be parsed; carries the offending snippet.
    #[error("parse error: {detail}; offending snippet: {snippet:?}")]
    Parse { detail: String, snippet: String },

    /// Transport-level or protocol-level backend failure.
    #[error("backend error: {0}")]
    Backend(String),

    /// A pipeline stage could not complete. Details are phrased so the
    /// message reads "stage <name> <detail>", e.g. "stage macro-merge
    /// incomplete".
    #[error("stage {stage} {detail}")]
    Stage { stage: String, detail: String },

    /// Environment rejected an operation.
    #[error("environment error: {0}")]
    Env(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }

    pub fn stage(stage: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.display().to_string(),
            source,
        }
    }

    /// Exit-code class for the CLI: 2 config, 3 stage, 4 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Invalid { .. } => 2,
            Error::Backend(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
