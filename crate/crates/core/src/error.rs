use std::path::PathBuf;

use thiserror::Error;

/// Every failure the core can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error at {node}: {msg}")]
    Shape { node: String, msg: String },

    #[error("non-finite value produced at {node}")]
    Numerics { node: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("empty mask: {0}")]
    EmptyMask(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(node: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Shape {
            node: node.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable tag, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "ShapeError",
            Error::Numerics { .. } => "NumericsError",
            Error::Contract(_) => "ContractError",
            Error::Config(_) => "ConfigError",
            Error::Data(_) => "DataError",
            Error::Format { .. } => "FormatError",
            Error::DegenerateInput(_) => "DegenerateInputError",
            Error::EmptyMask(_) => "EmptyMaskError",
            Error::Io { .. } => "IOError",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
