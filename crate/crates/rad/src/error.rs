use std::io;
use std::path::PathBuf;

/// Process exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    /// A computation failed: non-finite values, every experiment cell failed.
    pub const RUNTIME: u8 = 1;
    /// Bad flags or configuration values (clap uses the same code).
    pub const USAGE: u8 = 2;
    /// An input file is missing, malformed or inconsistent with another.
    pub const INPUT: u8 = 3;
    /// An output file could not be written.
    pub const OUTPUT: u8 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum RadError {
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: io::Error },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("dimension mismatch: {} has d = {left_dim}, {} has d = {right_dim}", left.display(), right.display())]
    DimensionMismatch {
        left: PathBuf,
        left_dim: usize,
        right: PathBuf,
        right_dim: usize,
    },
    #[error("{0}")]
    Config(String),
    #[error("all {0} experiment cells failed")]
    AllCellsFailed(usize),
    #[error(transparent)]
    Core(#[from] rad_core::Error),
}

impl RadError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RadError::Read { .. } | RadError::Format { .. } | RadError::DimensionMismatch { .. } => exit::INPUT,
            RadError::Write { .. } => exit::OUTPUT,
            RadError::Config(_) => exit::USAGE,
            RadError::AllCellsFailed(_) | RadError::Core(_) => exit::RUNTIME,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        RadError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = RadError> = std::result::Result<T, E>;

pub(crate) fn read_bytes(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| RadError::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_bytes(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let fail = |source| RadError::Write {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(fail)?;
    }
    std::fs::write(path, bytes).map_err(fail)
}
