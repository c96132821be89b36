use thiserror::Error;

/// Errors raised by the state algebra, statistics, security analysis and CLI layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unsupported dimension {0} (expected 2 or 3)")]
    UnsupportedDimension(usize),

    #[error("index {index} out of range for {what} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no successful matched-ordinary events (zero denominator)")]
    ZeroDenominator,

    #[error("undefined bound: coefficient product A[{x}][{m}] * B[{y}][{m}] is zero")]
    UndefinedBound { x: usize, y: usize, m: usize },

    #[error("degenerate attack: every matched-ordinary success probability is zero")]
    DegenerateAttack,

    #[error("malformed table: {0}")]
    MalformedTable(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
