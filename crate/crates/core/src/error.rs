use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sequence")]
    EmptySequence,

    #[error("invalid combination: k={k} > m={m}")]
    InvalidCombination { m: u64, k: u64 },

    #[error("nonpositive variance: {0}")]
    NonpositiveVariance(f64),

    #[error("nonpositive parameter: {name}={value}")]
    NonpositiveParameter { name: &'static str, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "quadrature budget exhausted: best estimate {estimate} with error bound {error_bound}"
    )]
    QuadratureBudget { estimate: f64, error_bound: f64 },

    #[error("validity conditions not met: {0}")]
    ValidityNotMet(String),

    #[error("out-of-order step index: got {got}, expected {expected}")]
    OutOfOrderStep { got: usize, expected: usize },

    #[error("divergent gradient at step {step}")]
    DivergentGradient { step: usize },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("enumeration too large: n={0} exceeds the 12-example cap")]
    EnumerationTooLarge(usize),

    #[error("csv parse error at row {row}, column {column}: {message}")]
    CsvParse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Other(String),
}
