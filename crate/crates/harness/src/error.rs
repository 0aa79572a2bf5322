use std::path::PathBuf;

use minority_core::Error as CoreError;

/// Process exit codes used by the `minority` binary.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const NUMERIC: i32 = 4;
    pub const CHECKPOINT: i32 = 5;
}

/// Why a checkpoint file could not be loaded.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint was trained on schedule {found:016x}, run uses {expected:016x}")]
    FingerprintMismatch { expected: u64, found: u64 },
    #[error("checkpoint is truncated: needed {needed} bytes, file has {available}")]
    Truncated { needed: usize, available: usize },
    #[error("checkpoint is corrupt: {0}")]
    Corrupt(String),
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint {path} not found")]
    MissingCheckpoint { path: PathBuf },

    #[error("{path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::MissingCheckpoint { .. } => exit::CONFIG,
            HarnessError::Io { .. } => exit::IO,
            HarnessError::Checkpoint { .. } => exit::CHECKPOINT,
            HarnessError::Core(e) if e.is_numeric() => exit::NUMERIC,
            HarnessError::Core(_) => exit::CONFIG,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
