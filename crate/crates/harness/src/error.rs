use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] polyp_core::Error),

    #[error(transparent)]
    Data(#[from] polyp_data::Error),

    #[error(transparent)]
    Metrics(#[from] polyp_metrics::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },

    #[error("loss diverged at iteration {iteration} (epoch {epoch}): {value}")]
    Divergence { iteration: usize, epoch: usize, value: f64 },

    #[error("plot: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::File { path: path.into(), message: message.to_string() }
    }
}
