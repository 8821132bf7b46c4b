use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error at line {line}: {msg}")]
    Validation { line: usize, msg: String },

    #[error("channel `{0}` has zero variance")]
    DegenerateChannel(String),

    #[error("no super-vectors could be built: {0}")]
    EmptyDataset(String),

    #[error("training diverged at sample {sample}: non-finite loss")]
    Divergence { sample: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("day {0} has {1} predictions, expected 24")]
    PartialDay(NaiveDate, usize),

    #[error("t-test samples are degenerate: {0}")]
    DegenerateSamples(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
