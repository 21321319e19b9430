use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every stage of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown zone token {0:?} (accepted: PZ, TZ, AS)")]
    UnknownZone(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("degenerate image: {0}")]
    Degenerate(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("index {index} out of range 0..{len}")]
    OutOfRange { index: usize, len: usize },
    #[error("window out of bounds: {0}")]
    OutOfBounds(String),
    #[error("insufficient region: {0}")]
    InsufficientRegion(String),
    #[error("insufficient negatives: {0}")]
    InsufficientNegatives(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("solver did not converge: {0}")]
    Convergence(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, detail: impl ToString) -> Self {
        Error::Format {
            what,
            detail: detail.to_string(),
        }
    }

    /// Tags an error with the pipeline stage that raised it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by invalid user input rather than a failing
    /// computation. The CLI maps these to exit status 2.
    pub fn is_validation(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_validation();
        }
        matches!(
            self,
            Error::Format { .. }
                | Error::Shape(_)
                | Error::UnknownZone(_)
                | Error::EmptyDataset
                | Error::Config(_)
                | Error::OutOfRange { .. }
                | Error::Schema(_)
                | Error::Checksum(_)
                | Error::Unsupported(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
