use thiserror::Error;

/// Errors raised by tower arithmetic, lattice reduction and the verification harness.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("division by an element that is zero at working precision")]
    DivisionByZero,

    #[error("valuation of an element that is zero at working precision")]
    ValuationOfZero,

    #[error("insufficient precision: {0}")]
    InsufficientPrecision(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid tower parameters: {0}")]
    InvalidParams(String),

    #[error("internal inconsistency: {0}")]
    Internal(String),

    #[error("unknown suite `{0}`")]
    UnknownSuite(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
