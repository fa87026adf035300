use std::path::PathBuf;

/// Failures while decoding one of the binary file formats.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("value {value} at index {index} outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f32 },
    #[error("invalid UTF-8 in tensor name")]
    BadName,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("network spec: {0}")]
    Spec(String),
    #[error("gradient requested for a tensor that is not a tape parameter")]
    Detached,
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("pruning plan: {0}")]
    Plan(String),
    #[error("teacher has no output for clip id {0:?}")]
    MissingTeacherOutput(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
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

pub type Result<T, E = Error> = std::result::Result<T, E>;
