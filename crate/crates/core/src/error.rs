use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dilation {base}^{exponent} overflows u64")]
    Overflow { base: u64, exponent: u32 },

    #[error("parse error at position {position} (token {token:?}): {reason}")]
    Parse {
        token: String,
        position: usize,
        reason: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("all candidates have zero fitness")]
    DegenerateFitness,

    #[error("all branch weights are zero")]
    DegenerateWeights,

    #[error("need {need} evaluated candidates, have {have}")]
    UnderfullPopulation { need: usize, have: usize },

    #[error("crossover parents differ in shape: {0}")]
    InvalidPair(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("{}: {reason}", path.display())]
    Load { path: PathBuf, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn load(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Configuration problems the CLI reports with exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::Overflow { .. } | Error::Parse { .. }
        )
    }
}
