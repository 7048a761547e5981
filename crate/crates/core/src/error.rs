use thiserror::Error;

use crate::formula::FormulaError;

pub type Result<T> = std::result::Result<T, GannError>;

#[derive(Debug, Error)]
pub enum GannError {
    #[error("formula: {0}")]
    Formula(#[from] FormulaError),

    #[error("missing column `{column}`")]
    MissingColumn { column: String },

    #[error("column `{column}` is not numeric (row {row}: {value:?})")]
    NonNumericColumn { column: String, row: usize, value: String },

    #[error("invalid response for {family} family: {detail}")]
    InvalidResponse { family: String, detail: String },

    #[error("degenerate response: {0}")]
    DegenerateResponse(String),

    #[error("term `{term}` has a constant covariate (zero weighted variance)")]
    ConstantCovariate { term: String },

    #[error("numeric instability while training term `{term}`: non-finite gradient")]
    NumericInstability { term: String },

    #[error("unknown term `{term}`")]
    UnknownTerm { term: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("not implemented: {0}")]
    NotImplemented(String),

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl GannError {
    /// Errors caused by the caller's inputs (formula, schema, configuration)
    /// rather than by the fitting procedure itself.
    pub fn is_usage_error(&self) -> bool {
        matches!(
            self,
            GannError::Formula(_)
                | GannError::MissingColumn { .. }
                | GannError::NonNumericColumn { .. }
                | GannError::InvalidResponse { .. }
                | GannError::UnknownTerm { .. }
                | GannError::InvalidConfig(_)
                | GannError::NotImplemented(_)
        )
    }

    /// Short stable tag used as a machine-greppable prefix in CLI messages.
    pub fn kind(&self) -> &'static str {
        match self {
            GannError::Formula(_) => "formula",
            GannError::MissingColumn { .. } => "missing-column",
            GannError::NonNumericColumn { .. } => "non-numeric-column",
            GannError::InvalidResponse { .. } => "invalid-response",
            GannError::DegenerateResponse(_) => "degenerate-response",
            GannError::ConstantCovariate { .. } => "constant-covariate",
            GannError::NumericInstability { .. } => "numeric-instability",
            GannError::UnknownTerm { .. } => "unknown-term",
            GannError::InvalidData(_) => "invalid-data",
            GannError::InvalidConfig(_) => "invalid-config",
            GannError::NotImplemented(_) => "not-implemented",
            GannError::CorruptModel(_) => "corrupt-model",
            GannError::VersionMismatch { .. } => "version-mismatch",
            GannError::Csv(_) => "csv",
            GannError::Io(_) => "io",
        }
    }
}
