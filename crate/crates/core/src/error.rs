use std::path::PathBuf;

/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two tensor shapes that must agree do not.
    #[error("shape mismatch in {op}: left {lhs:?} vs right {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An API contract was violated (wrong rank, non-scalar loss, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An input is outside the domain the operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value is invalid or a config file failed to parse.
    #[error("config error: {0}")]
    Config(String),

    /// A data file is malformed (bad magic, truncated, checksum, ...).
    #[error("data format error: {0}")]
    Format(String),

    /// A numerical quantity became NaN/Inf where it must stay finite.
    #[error("non-finite {what} in {name}")]
    NonFinite { what: &'static str, name: String },

    #[error("io error on {path}: {source}")]
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
}

pub type Result<T> = std::result::Result<T, Error>;
