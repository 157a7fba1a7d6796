use std::io;
use std::path::PathBuf;

pub type BenchResult<T> = std::result::Result<T, BenchError>;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    /// A stage input is missing or was not declared by an earlier stage.
    #[error("missing dependency: {0}")]
    Dependency(String),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed file {}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    /// Some Schwarz runs failed to converge; the others were written.
    #[error("Schwarz iteration did not converge: {0}")]
    NonConvergence(String),
    #[error(transparent)]
    Numerical(#[from] nn_schwarz::Error),
}

impl BenchError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        BenchError::Io { path: path.into(), source }
    }

    /// Process exit code: 2 configuration, 3 dependency, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) | BenchError::Io { .. } => 2,
            BenchError::Dependency(_) | BenchError::Format { .. } => 3,
            BenchError::Numerical(nn_schwarz::Error::Config(_))
            | BenchError::Numerical(nn_schwarz::Error::UnknownBoundaryCondition { .. }) => 2,
            BenchError::NonConvergence(_) | BenchError::Numerical(_) => 4,
        }
    }
}
