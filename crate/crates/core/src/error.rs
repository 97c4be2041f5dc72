use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unknown id `{0}`")]
    Lookup(String),

    #[error("{path}: format error at byte offset {offset}: {message}")]
    Format { path: String, offset: u64, message: String },

    #[error("{path}: schema error in `{field}`: {message}")]
    Schema {
        path: String,
        field: String,
        message: String,
    },

    #[error("{path}: unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { path: String, found: u32, supported: u32 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal consistency: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn format(path: impl Into<String>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn schema(path: impl Into<String>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidPose(_) => "invalid-pose",
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::Argument(_) => "argument",
            Error::Lookup(_) => "lookup",
            Error::Format { .. } => "format",
            Error::Schema { .. } => "schema",
            Error::UnsupportedVersion { .. } => "unsupported-version",
            Error::Io { .. } => "io",
            Error::Internal(_) => "internal",
        }
    }
}
