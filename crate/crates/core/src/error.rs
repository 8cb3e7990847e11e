use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes or dimensions.
    #[error("dimension error: {0}")]
    Shape(String),

    /// Inconsistent configuration (modality, embodiment, hyperparameters).
    #[error("config error: {0}")]
    Config(String),

    /// Caller violated an operation's precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// Observation or dataset lacks a field the configuration requires.
    #[error("data error: {0}")]
    Data(String),

    #[error("unknown embodiment `{0}`")]
    UnknownEmbodiment(String),

    #[error("unknown instruction `{0}`")]
    UnknownInstruction(String),

    #[error("target ({x:.4}, {y:.4}) unreachable: {deficit:.6} m beyond reach")]
    Unreachable { x: f64, y: f64, deficit: f64 },

    #[error("expert failed {attempts} consecutive attempts for seed {seed}")]
    Generation { seed: u64, attempts: u32 },

    #[error("{}: bad magic bytes", path.display())]
    BadMagic { path: PathBuf },

    #[error("{}: format version {found}, expected {expected}", path.display())]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{}: truncated ({})", .1.display(), .0)]
    Truncated(String, PathBuf),

    #[error("{}: checksum mismatch in {block}", path.display())]
    Checksum { block: String, path: PathBuf },

    #[error("malformed record: {0}")]
    Malformed(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
