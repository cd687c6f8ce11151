use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("statistic undefined for a concept with zero count")]
    EmptyConcept,

    #[error("partition must contain at least one child")]
    EmptyPartition,

    #[error("invalid tree operation: {0}")]
    InvalidOperation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("class {class} has {available} training instances, {required} required")]
    ClassTooSmall {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("bad magic number in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated payload in {path}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("record misalignment in {path}: {len} bytes is not a multiple of {record}")]
    Misaligned {
        path: PathBuf,
        len: usize,
        record: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("malformed data: {0}")]
    Format(String),

    #[error("schema version mismatch: this build reads version {expected}, file has version {found}")]
    SchemaVersion { expected: u32, found: u32 },

    #[error("split D{split}: {source}")]
    AtSplit { split: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_split(self, split: usize) -> Error {
        Error::AtSplit {
            split,
            source: Box::new(self),
        }
    }

    /// True for errors caused by the input data rather than by the program.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::AtSplit { source, .. } => source.is_data_error(),
            Error::Config(_) | Error::InvalidOperation(_) | Error::NonFinite(_) => false,
            Error::EmptyConcept | Error::EmptyPartition => false,
            _ => true,
        }
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
