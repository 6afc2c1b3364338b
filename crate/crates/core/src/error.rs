use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("class list mismatch: expected {expected:?}, found {found:?}")]
    ClassMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("label `{0}` is not covered by the merge map")]
    UnmappedLabel(String),

    #[error("class `{0}` has no samples")]
    EmptyClass(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used for structured error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::ClassMismatch { .. } => "class_mismatch",
            Error::UnmappedLabel(_) => "unmapped_label",
            Error::EmptyClass(_) => "empty_class",
            Error::Empty(_) => "empty",
            Error::Format(_) => "format",
            Error::Version { .. } => "version",
            Error::Io { .. } => "io",
        }
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Format(e.to_string())
    }
}
