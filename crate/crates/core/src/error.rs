use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {dims:?}: {reason}")]
    InvalidShape {
        dims: Vec<usize>,
        reason: &'static str,
    },

    #[error("element count of shape {0:?} overflows usize")]
    ShapeOverflow(Vec<usize>),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("cannot reshape {from:?} ({from_len} elements) into {to:?} ({to_len} elements)")]
    ReshapeMismatch {
        from: Vec<usize>,
        to: Vec<usize>,
        from_len: usize,
        to_len: usize,
    },

    #[error("axes {0:?} are not a permutation of 0..rank")]
    InvalidPermutation(Vec<usize>),

    #[error("mode {mode} out of range for tensor of rank {rank}")]
    ModeOutOfRange { mode: usize, rank: usize },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("arithmetic overflow while computing {0}")]
    CountOverflow(&'static str),

    #[error("dense map would need {entries} entries, above the cap of {cap}")]
    SizeCapExceeded { entries: u128, cap: u128 },

    #[error("non-finite loss at epoch {epoch}, step {step}: {value}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        value: f64,
    },

    #[error("model config: {0}")]
    Config(String),

    #[error("malformed NDT1 data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
