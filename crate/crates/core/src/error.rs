use thiserror::Error;

/// Crate-wide error type. Variants are grouped by the pipeline stage that
/// raises them; all carry enough context to be actionable from the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("degenerate pose: {0}")]
    DegeneratePose(String),

    #[error("degenerate axis {axis}: min equals max ({value})")]
    DegenerateAxis { axis: usize, value: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("target {target} outside stream range [{first}, {last}]")]
    OutOfRange { target: f64, first: f64, last: f64 },

    #[error("streams do not overlap in time")]
    NoOverlap,

    #[error("unknown posture: {0:?}")]
    UnknownPosture(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("bad tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
