use thiserror::Error;

#[derive(Debug, Error)]
pub enum DcnError {
    /// Operand shapes do not fit the operation.
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration field failed validation. `field` is the JSON key.
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DcnError>;

impl DcnError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        DcnError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        DcnError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for the CLI: 2 for configuration problems, 3 for
    /// numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            DcnError::Config { .. } | DcnError::Json(_) => 2,
            DcnError::Numerical(_) => 3,
            _ => 1,
        }
    }
}
