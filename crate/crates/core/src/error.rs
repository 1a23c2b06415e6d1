use thiserror::Error;

use crate::solvers::IterTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    Singular { row: usize, pivot: f64 },

    #[error("invalid label {value}: logistic loss expects labels in {{-1, +1}}")]
    InvalidLabel { value: f64 },

    #[error("state is infeasible: {0}")]
    Infeasible(String),

    #[error("unknown block `{0}` for this splitting form")]
    UnknownBlock(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("solver diverged after {} records: {reason}", trace.records.len())]
    Divergence {
        reason: String,
        trace: Box<IterTrace>,
    },

    #[error("unstable toy configuration: {0}")]
    Stability(String),

    #[error("trace has {len} records, need more than {needed}")]
    TraceTooShort { len: usize, needed: usize },

    #[error("KL parameters carry no f* value")]
    MissingFstar,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
