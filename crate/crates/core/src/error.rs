use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("non-finite value produced in layer {layer}")]
    NumericOverflow { layer: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("mask nesting violated at layer {layer}")]
    MaskNesting { layer: usize },

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("index out of range: {0}")]
    Range(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("enumeration guard exceeded: {tuples} head tuples (limit {limit})")]
    GuardExceeded { tuples: u128, limit: u128 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format_version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Dimension { op, left, right }
    }
}
