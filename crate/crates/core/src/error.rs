use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt container: {0}")]
    CorruptContainer(String),

    #[error("inconsistent container: {0}")]
    InconsistentContainer(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("undefined concordance index: {0}")]
    UndefinedCIndex(String),

    #[error("undefined test: {0}")]
    UndefinedTest(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("empty cohort: {0}")]
    EmptyCohort(String),

    #[error("training aborted at step {step}: {reason}")]
    TrainingAborted { step: usize, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures caused by non-finite arithmetic rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::TrainingAborted { .. })
    }
}
