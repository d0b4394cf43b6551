use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] lidcert_core::Error),

    #[error("IDX parse error at byte {offset}: {message}")]
    Idx { offset: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("task {task}: {source}")]
    Task {
        task: usize,
        #[source]
        source: lidcert_core::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization failed: {0}")]
    Serialize(String),
}

impl HarnessError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    /// True for errors raised by configuration checks, before any compute.
    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}

pub(crate) trait TaskContext<T> {
    fn at_task(self, task: usize) -> Result<T>;
}

impl<T> TaskContext<T> for lidcert_core::Result<T> {
    fn at_task(self, task: usize) -> Result<T> {
        self.map_err(|source| HarnessError::Task { task, source })
    }
}
