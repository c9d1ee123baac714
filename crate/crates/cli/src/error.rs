use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage `{stage}` needs {path}; run `carebi {producer}` first")]
    MissingArtifact { stage: String, path: String, producer: String },
    #[error("no artifacts in {0}; run a pipeline stage first")]
    NoArtifacts(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] carebi::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// 1 for problems the user can fix, 2 for numerical or internal failures.
    pub fn exit_code(&self) -> i32 {
        use carebi::Error as E;
        match self {
            CliError::Core(E::Singular(_) | E::NonConvergence(..) | E::NotConverged(_) | E::Bootstrap(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
