use std::io;
use std::path::PathBuf;
use std::sync::Arc;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] strata_core::Error),
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: Arc<io::Error> },
    #[error("preset {name} {version} not found")]
    NotFound { name: String, version: String },
    #[error("preset {name} {version} already exists")]
    AlreadyExists { name: String, version: String },
    #[error("integrity check failed for asset {asset}")]
    Integrity { asset: String },
    #[error("corrupt preset: {0}")]
    CorruptPreset(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("benchmark failed in {phase} at step {step}: {message}")]
    Bench { phase: String, step: usize, message: String },
    #[error("fixture error: {0}")]
    Fixture(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source: Arc::new(source) }
    }
}
