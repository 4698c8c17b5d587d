use std::path::PathBuf;

use crate::scorenet::ScoreNetwork;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("degenerate time: the perturbation kernel has zero variance")]
    DegenerateTime,

    #[error("vanishing signal: alpha_bar {0:e} is below 1e-12")]
    VanishingSignal(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing score target: alpha_y > 0 requires a preferred score")]
    MissingScoreTarget,

    #[error("design outside task bounds at coordinate {index}: {value} not in [{lo}, {hi}]")]
    OutOfBounds {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("task `{0}` has a single objective and no Pareto front reference")]
    NotMultiObjective(String),

    #[error("removal would leave {0} samples (need at least 2)")]
    RemovalTooLarge(usize),

    #[error("divergence: non-finite loss at epoch {epoch}")]
    Divergence {
        epoch: usize,
        /// Network state after the last step that produced a finite loss.
        checkpoint: Box<ScoreNetwork>,
    },

    #[error("schema mismatch in {path}: {reason}")]
    Schema { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    Ok(())
}
