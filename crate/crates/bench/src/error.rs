use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    /// Rejected input; exit code 2.
    #[error("validation error: {0}")]
    Validation(String),
    /// A solver or optimizer failed; exit code 3.
    #[error("numerical failure: {0}")]
    Numerical(trrb_core::error::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed JSON in {path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{0}")]
    Output(String),
}

impl From<trrb_core::error::Error> for BenchError {
    fn from(e: trrb_core::error::Error) -> Self {
        use trrb_core::error::Error as E;
        match e {
            E::Configuration(m) | E::Argument(m) => BenchError::Validation(m),
            E::Dimension { expected, got } => {
                BenchError::Validation(format!("dimension mismatch: expected {expected}, got {got}"))
            }
            other => BenchError::Numerical(other),
        }
    }
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Validation(_) | BenchError::Json { .. } => 2,
            BenchError::Numerical(_) => 3,
            BenchError::Io { .. } | BenchError::Output(_) => 1,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        BenchError::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
