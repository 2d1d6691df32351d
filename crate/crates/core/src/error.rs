use std::fmt;

/// Row/column shape of a dense matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape(pub usize, pub usize);

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.0, self.1)
    }
}

/// Errors returned by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands had incompatible shapes.
    #[error("dimension mismatch in {context}: {left} vs {right}")]
    Dimension {
        context: String,
        left: Shape,
        right: Shape,
    },
    /// A hyperparameter or argument was outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// The combination of settings cannot be satisfied by the data.
    #[error("configuration error: {0}")]
    Config(String),
    /// An API precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Input data was malformed or empty.
    #[error("data error: {0}")]
    Data(String),
    /// Too many event rows were rejected during ingestion.
    #[error("ingestion failed: {rejected} of {total} rows rejected (first: {first_reason})")]
    Ingestion {
        rejected: usize,
        total: usize,
        first_reason: String,
    },
    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    /// A checkpoint file was malformed or does not match the model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, left: Shape, right: Shape) -> Self {
        Error::Dimension {
            context: context.into(),
            left,
            right,
        }
    }

    /// Prefixes the context of a dimension error with the component that
    /// raised it; other variants pass through.
    pub(crate) fn in_branch(self, branch: &str) -> Self {
        match self {
            Error::Dimension { context, left, right } => Error::Dimension {
                context: format!("{branch}: {context}"),
                left,
                right,
            },
            other => other,
        }
    }

    /// Process exit code for this error: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) => 1,
            Error::Config(_)
            | Error::Data(_)
            | Error::Ingestion { .. }
            | Error::Checkpoint(_)
            | Error::Io(_)
            | Error::Csv(_) => 2,
            Error::NonFinite { .. } | Error::Dimension { .. } | Error::Contract(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
