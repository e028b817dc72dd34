use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),

    #[error("division by zero at element {0}")]
    DivisionByZero(usize),

    #[error("{op}: non-positive output size for input {input:?}")]
    NonPositiveOutput { op: &'static str, input: Vec<usize> },

    #[error("variable belongs to a different tape")]
    TapeMismatch,

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("batch norm needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),

    #[error("probability {0} outside [0, 1)")]
    BadProbability(f32),

    #[error("parameter {0} has no gradient")]
    MissingGrad(String),

    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },

    #[error("invalid recognizer plan: {0}")]
    InvalidPlan(String),

    #[error("model has no dense output head")]
    NoHead,

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed image header: {0}")]
    MalformedHeader(String),

    #[error("truncated data: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },

    #[error("class '{0}' has no samples")]
    EmptyClass(String),

    #[error("unexpected file extension: {0}")]
    UnknownExtension(PathBuf),

    #[error("bad checkpoint magic")]
    BadMagic,

    #[error("checkpoint CRC mismatch (stored {stored:08x}, computed {computed:08x})")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("architecture mismatch: expected {expected}, found '{found}'")]
    ArchMismatch { expected: &'static str, found: String },

    #[error("unsupported checkpoint version {0}")]
    VersionUnsupported(u16),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
