use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),

    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),

    #[error("json output: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("numerical abort: {0}")]
    Numerical(#[from] stochframe_core::Error),

    #[error("validation failed: {0}")]
    Validation(String),
}

impl HarnessError {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        HarnessError::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) => 2,
            HarnessError::Config(_) | HarnessError::Parse { .. } => 3,
            HarnessError::Numerical(_) => 4,
            HarnessError::Io { .. } | HarnessError::Csv(_) | HarnessError::Json(_) | HarnessError::Malformed(_) => 1,
        }
    }

    /// Short machine-readable kind used in diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Validation(_) => "validation",
            HarnessError::Config(_) | HarnessError::Parse { .. } => "config",
            HarnessError::Numerical(_) => "numerical",
            HarnessError::Io { .. } | HarnessError::Csv(_) | HarnessError::Json(_) | HarnessError::Malformed(_) => "io",
        }
    }
}
