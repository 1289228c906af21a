use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-wide error. Each variant is prefixed with the module it comes from.
#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor: {0}")]
    Shape(String),
    #[error("autodiff: graph already consumed")]
    GraphConsumed,
    #[error("autodiff: backward root must have exactly one element, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("optimizer: missing gradient for trainable parameter `{0}`")]
    MissingGradient(String),
    #[error("ply: {0}")]
    Ply(#[from] PlyError),
    #[error("image: {0}")]
    Image(String),
    #[error("distortion: {0}")]
    Distortion(String),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricError),
    #[error("config: {0}")]
    Config(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("trainer: {0}")]
    Train(String),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Configuration problems map to a usage error at the command line;
    /// everything else is a data or format error.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PlyError {
    #[error("not a PLY file")]
    BadMagic,
    #[error("unsupported format `{0}`")]
    UnsupportedFormat(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("vertex element lacks coordinate property `{0}`")]
    MissingCoordinate(&'static str),
    #[error("truncated data at vertex {vertex} (byte offset {offset})")]
    Truncated { vertex: usize, offset: usize },
    #[error("bad value at vertex {vertex}: {msg}")]
    BadValue { vertex: usize, msg: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("bad magic {0:?}, expected \"ITPQ\"")]
    BadMagic([u8; 4]),
    #[error("version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated block `{0}`")]
    Truncated(String),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("dtype mismatch for `{name}`: found code {found}, expected {expected}")]
    DtypeMismatch { name: String, found: u8, expected: u8 },
    #[error("architecture mismatch at tensor `{0}`")]
    ArchitectureMismatch(String),
    #[error("config digest mismatch: checkpoint {stored}, supplied {supplied}")]
    DigestMismatch { stored: String, supplied: String },
    #[error("malformed: {0}")]
    Malformed(String),
}

#[derive(Debug, Error, PartialEq, Clone)]
pub enum MetricError {
    #[error("undefined (constant input)")]
    Undefined,
    #[error("insufficient data: need at least {needed} samples, got {got}")]
    Insufficient { needed: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}
