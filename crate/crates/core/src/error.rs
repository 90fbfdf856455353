use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Top-level error for the analysis pipeline.
///
/// The CLI maps variants onto process exit codes, so new variants should be
/// slotted into [`Error::exit_code`] as well.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unreadable input: {0}")]
    UnreadableInput(#[source] io::Error),

    #[error("schema violation at line {line}: {field}: {message}")]
    SchemaViolation {
        line: usize,
        field: String,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid company mapping file at line {line}: {message}")]
    MappingFileInvalid { line: usize, message: String },

    #[error("scenario is infeasible: {0}")]
    InfeasibleConfig(String),

    #[error("predictions do not belong to the scored corpus: {0}")]
    CorpusMismatch(String),

    #[error("cannot write {path}: {source}")]
    UnwritablePath {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// 2 for input schema problems, 3 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::SchemaViolation { .. } => 2,
            Error::Config(_) | Error::MappingFileInvalid { .. } | Error::InfeasibleConfig(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
