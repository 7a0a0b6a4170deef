use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Shapes that do not fit together: mismatched groups, out-of-range
    /// vertices, configurations of different lengths.
    #[error("structural error: {0}")]
    Structural(String),

    /// Numerically invalid input such as a probability vector that does not
    /// sum to one.
    #[error("validation error: {0}")]
    Validation(String),

    /// An exhaustive computation that would exceed its configured budget.
    #[error("budget exceeded: {what} needs {required}, budget is {budget}")]
    Budget {
        what: String,
        required: u128,
        budget: u128,
    },

    /// The operation is defined only for a representation the input lacks,
    /// e.g. atom identity on a sampler-backed measure.
    #[error("refused: {0}")]
    Refused(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn structural(msg: impl Into<String>) -> Error {
    Error::Structural(msg.into())
}

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
