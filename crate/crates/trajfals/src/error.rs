use std::path::PathBuf;

use thiserror::Error;
use trajfals_core::falsify::FalsifyError;
use trajfals_core::lang::ParseError;

/// Process exit codes of the `trajfals` binary.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const PARSE: i32 = 2;
    pub const PREDICTOR: i32 = 3;
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{}", path.display(), source)]
    Parse { path: PathBuf, source: ParseError },
    #[error("{}: {reason}", path.display())]
    Library { path: PathBuf, reason: String },
    #[error("predictor launch failed: {0}")]
    PredictorLaunch(String),
    #[error("scenario `{scenario}`: {source}")]
    Falsify {
        scenario: String,
        #[source]
        source: FalsifyError,
    },
    #[error("row for `{program_id}` was recorded against program hash {recorded}, current file hashes to {current}")]
    HashMismatch {
        program_id: String,
        recorded: String,
        current: String,
    },
    #[error("replay: {0}")]
    Replay(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Library { .. } => exit::PARSE,
            Error::PredictorLaunch(_) => exit::PREDICTOR,
            _ => exit::USAGE,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
