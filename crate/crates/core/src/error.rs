use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("degenerate attention mask: row {row} has no allowed entry")]
    DegenerateMask { row: usize },
    #[error("label error: {0}")]
    Label(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("segment error: {0}")]
    Segment(String),
    #[error("duration error: {0}")]
    Duration(String),
    #[error("synthetic spec error: {0}")]
    Spec(String),
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("ordering error: {0}")]
    Ordering(String),
    #[error("metadata error: {0}")]
    Metadata(String),
    #[error("join error: unknown video id {0:?}")]
    Join(String),
    #[error("missing upstream artifact: {}", .0.display())]
    Dependency(PathBuf),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used by the command line on failure.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::DegenerateMask { .. } => "degenerate_mask",
            Error::Label(_) => "label",
            Error::Numeric(_) => "numeric",
            Error::Config(_) => "config",
            Error::Segment(_) => "segment",
            Error::Duration(_) => "duration",
            Error::Spec(_) => "spec",
            Error::Parse { .. } => "parse",
            Error::Data(_) => "data",
            Error::Ordering(_) => "ordering",
            Error::Metadata(_) => "metadata",
            Error::Join(_) => "join",
            Error::Dependency(_) => "dependency",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
