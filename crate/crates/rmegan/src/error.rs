use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] rmegan_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: byte {offset}: {msg}", path.display())]
    Format { path: PathBuf, offset: u64, msg: String },
    #[error("{}: {msg}", path.display())]
    Load { path: PathBuf, msg: String },
    #[error("{}:{line}: {msg}", path.display())]
    Config { path: PathBuf, line: usize, msg: String },
    #[error("missing input {}: {hint}", path.display())]
    MissingInput { path: PathBuf, hint: String },
}

impl Error {
    /// Stable, machine-parsable class name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Core(e) => e.class(),
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Load { .. } => "load",
            Error::Config { .. } => "config",
            Error::MissingInput { .. } => "missing_input",
        }
    }

    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn format(path: impl AsRef<Path>, offset: u64, msg: impl Into<String>) -> Self {
        Error::Format { path: path.as_ref().to_path_buf(), offset, msg: msg.into() }
    }

    pub fn load(path: impl AsRef<Path>, msg: impl Into<String>) -> Self {
        Error::Load { path: path.as_ref().to_path_buf(), msg: msg.into() }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Error::MissingInput {
            path: path.to_path_buf(),
            hint: "file does not exist".into(),
        },
        _ => Error::io(path, e),
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
