use std::path::Path;

use thiserror::Error;

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {cause}")]
    Io { path: String, cause: String },

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Core(#[from] vqa_fusion::Error),
}

impl BenchError {
    pub fn io(path: &Path, cause: impl std::fmt::Display) -> BenchError {
        BenchError::Io {
            path: path.display().to_string(),
            cause: cause.to_string(),
        }
    }

    /// Process exit status: 1 configuration, 2 I/O or parse, 3 invariant.
    pub fn exit_code(&self) -> i32 {
        use vqa_fusion::Error as E;
        match self {
            BenchError::Config(_) => 1,
            BenchError::Io { .. } | BenchError::Parse { .. } => 2,
            BenchError::Invariant(_) => 3,
            BenchError::Core(e) => match e {
                E::Config(_) | E::Validation(_) => 1,
                E::Io { .. } | E::Parse(_) => 2,
                E::Dimension(_) | E::State(_) | E::Training { .. } => 3,
            },
        }
    }
}
