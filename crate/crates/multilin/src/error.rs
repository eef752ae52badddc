use thiserror::Error;

/// Errors shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of two values do not conform for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A mode index outside `1..=order`. Mode indices are 1-based.
    #[error("mode {mode} out of range for an order-{order} tensor (modes are 1-based)")]
    InvalidMode { mode: usize, order: usize },

    /// An argument violated an operation's contract (wrong term order,
    /// empty dataset, non-positive extent, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: loss is not finite")]
    TrainingDiverged { step: usize },

    /// A file is not valid NPY v1.0 in the supported subset; `field` names
    /// the offending header field or section.
    #[error("npy format error in `{field}`: {detail}")]
    NpyFormat { field: String, detail: String },

    /// A selector line could not be parsed.
    #[error("selector parse error at line {line}: {detail}")]
    SelectorParse { line: usize, detail: String },

    /// An attribute-matrix column sums to zero, so column normalisation
    /// is undefined.
    #[error("attribute column {column} sums to zero; normalisation undefined")]
    ZeroSumColumn { column: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
