use std::path::{Path, PathBuf};

/// Failures of a command, each mapped to one exit code.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] mars_core::Error),
    #[error("io error: {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// Bad command line: unknown verb or flag, malformed value.
    #[error("usage error: {0}")]
    Cli(String),
    /// A gradient check exceeded its tolerance.
    #[error("numerical error: gradient check failed: {0}")]
    GradCheck(String),
    /// Stopped by a signal after writing a checkpoint.
    #[error("interrupted: checkpoint written to {}", .0.display())]
    Interrupted(PathBuf),
}

pub type RunResult<T> = Result<T, RunError>;

impl RunError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        RunError::Io { path: path.to_path_buf(), source }
    }

    pub fn category(&self) -> &'static str {
        match self {
            RunError::Core(mars_core::Error::Config(_)) => "config",
            RunError::Core(mars_core::Error::Usage(_)) | RunError::Cli(_) => "usage",
            RunError::Core(mars_core::Error::Numerical(_)) | RunError::GradCheck(_) => "numerical",
            RunError::Io { .. } => "io",
            RunError::Interrupted(_) => "interrupted",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "usage" => 3,
            "numerical" => 4,
            "io" => 5,
            _ => 130,
        }
    }
}

pub fn config_error(msg: impl Into<String>) -> RunError {
    RunError::Core(mars_core::Error::Config(msg.into()))
}
