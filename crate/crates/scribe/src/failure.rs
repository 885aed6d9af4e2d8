use std::fmt;
use std::path::{Path, PathBuf};

/// A pipeline failure tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("[{stage}] {source}")]
    Core {
        stage: &'static str,
        #[source]
        source: scribe_core::Error,
    },
    #[error("[io] {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("[format] {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("[config] {0}")]
    Config(String),
}

impl Failure {
    pub fn core(stage: &'static str, source: scribe_core::Error) -> Self {
        Failure::Core { stage, source }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Failure::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        Failure::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Failure::Config(message.into())
    }

    /// Stage tag shown to the user.
    pub fn stage(&self) -> &'static str {
        match self {
            Failure::Core { stage, .. } => stage,
            Failure::Io { .. } => "io",
            Failure::Format { .. } => "format",
            Failure::Config(_) => "config",
        }
    }
}

/// Attaches a stage tag to core results.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T> StageExt<T> for scribe_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure::core(stage, e))
    }
}
