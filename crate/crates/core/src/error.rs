use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} outside the admissible range {lo}..={hi}")]
    OutOfRange { index: u64, lo: u64, hi: u64 },

    #[error("unsupported dimension {0}: certified nets exist for p in 2..=4 only")]
    UnsupportedDimension(usize),

    #[error("no root in (0, 1): d(1-2eps) = {0} must exceed 1")]
    NoRoot(f64),

    #[error("threshold bracket [{b_lo}, {b_hi}] does not contain target ARL {target}: measured {arl_lo} and {arl_hi}")]
    Bracket {
        b_lo: f64,
        b_hi: f64,
        target: f64,
        arl_lo: f64,
        arl_hi: f64,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("stream error at t={t}: {message}")]
    Stream { t: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
