use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate overlap between patches {0} and {1}: cross-covariance is rank deficient (sigma_min/sigma_max = {2:e})")]
    DegenerateOverlap(usize, usize, f64),

    #[error("rotation synchronization did not converge after {iterations} iterations (last change {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("training failed at epoch {epoch}: {source}")]
    Training {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite loss")]
    NonFiniteLoss,

    #[error("metric error: {0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_epoch(self, epoch: usize) -> Error {
        match self {
            e @ Error::Training { .. } => e,
            other => Error::Training {
                epoch,
                source: Box::new(other),
            },
        }
    }
}
