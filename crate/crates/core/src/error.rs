use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite loss at coordinate {coordinate} (probe {probe})")]
    NonFinite { coordinate: usize, probe: &'static str },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty task list")]
    EmptyTaskList,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("idx parse error at byte {offset}: {message}")]
    IdxParse { offset: usize, message: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("class {class} has {available} examples, need {required}")]
    InsufficientExamples {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("trace is missing required field `{0}`")]
    MissingField(String),

    #[error("parameter file: {0}")]
    ParamFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(context: &'static str, expected: impl ToString, actual: impl ToString) -> Error {
    Error::ShapeMismatch {
        context,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
