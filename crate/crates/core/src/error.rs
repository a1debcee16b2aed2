use std::io;
use std::path::PathBuf;

use crate::checkpoint::CheckpointError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition of an operation was not met (shapes, folds, ids).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("strategy `{strategy}` is not applicable to {tensor}: {reason}")]
    StrategyInapplicable { strategy: String, tensor: String, reason: String },

    /// Jacobi SVD hit its sweep cap. `best_estimate` holds the column norms
    /// reached so far, sorted descending.
    #[error("singular values did not converge after {sweeps} sweeps")]
    Convergence { sweeps: usize, best_estimate: Vec<f64> },

    #[error("training diverged at step {step} (loss {loss}); last checkpoint: {}",
        .last_checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    Divergence { step: usize, loss: f64, last_checkpoint: Option<PathBuf> },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

/// Return a [`Error::Contract`] unless the condition holds.
macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::Error::Contract(format!($($arg)*)));
        }
    };
}
pub(crate) use ensure;
