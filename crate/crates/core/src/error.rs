use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("user {user} has interacted with every item; no negative candidates left")]
    ExhaustedNegatives { user: usize },

    #[error("timestep {t} outside [{lo}, {hi}]")]
    TimestepOutOfRange { t: usize, lo: usize, hi: usize },

    #[error("degenerate diffusion step at t={0}: signal retention makes the update singular")]
    DegenerateStep(usize),

    #[error("expected score never fell below the negative threshold within {0} steps")]
    NoTransition(usize),

    #[error("metric undefined: user has no relevant items")]
    UndefinedMetric,

    #[error("no evaluable users in the test split")]
    NoEvaluableUsers,

    #[error("non-finite value in {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: String,
        epoch: usize,
        batch: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("synthetic generation failed: {0}")]
    Synthesis(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
