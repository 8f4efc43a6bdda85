//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error at row {row}, column {col}: {msg}")]
    Csv { row: usize, col: usize, msg: String },

    #[error("csv error: {0}")]
    CsvFile(#[from] csv::Error),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("unknown table `{0}`")]
    UnknownTable(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("key type mismatch: {left} vs {right}")]
    KeyTypeMismatch { left: String, right: String },

    #[error("non-numeric column `{0}` cannot be histogrammed")]
    NonNumericColumn(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("tree too large: {m} leaves exceeds limit {limit}")]
    TreeTooLarge { m: usize, limit: usize },

    #[error("expression error: {0}")]
    Expr(String),

    #[error("parse error at {location}: {msg}")]
    Parse { location: String, msg: String },

    #[error("model error: {0}")]
    Model(String),

    #[error("cost model error: {0}")]
    Cost(String),

    #[error("workload error: {0}")]
    Workload(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
