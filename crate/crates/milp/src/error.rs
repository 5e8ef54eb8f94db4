use thiserror::Error;

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("variable index {index} out of range (problem has {len} variables)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("variable {var} has invalid bounds [{lower}, {upper}]")]
    InvalidBounds { var: usize, lower: f64, upper: f64 },
    #[error("variable {0} is not binary")]
    NotBinary(usize),
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("simplex failed numerically after {attempts} refactorizations: {detail}")]
    NumericalFailure { attempts: usize, detail: String },
    #[error("problem relaxation is unbounded")]
    Unbounded,
    #[error("LP format parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
