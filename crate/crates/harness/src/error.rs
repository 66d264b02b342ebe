use std::path::{Path, PathBuf};

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration field `{field}`: {message}")]
    Usage { field: String, message: String },

    #[error(transparent)]
    Core(#[from] overlap_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("missing artifacts in {dir}: {}", .missing.join(", "))]
    MissingArtifacts { dir: PathBuf, missing: Vec<String> },
}

impl HarnessError {
    pub fn usage(field: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Usage {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 2 for bad input, 3 for everything else.
    /// A completed run whose criteria fail exits with 1 and is not an error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage { .. } | HarnessError::Comparison(_) | HarnessError::MissingArtifacts { .. } => 2,
            _ => 3,
        }
    }
}
