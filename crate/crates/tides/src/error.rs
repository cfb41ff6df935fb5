use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum TidesError {
    #[error("dimension mismatch: {op} got shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TidesError>;

impl TidesError {
    pub fn validation(msg: impl Into<String>) -> Self {
        TidesError::Validation(msg.into())
    }
}
