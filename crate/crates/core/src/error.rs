use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model, grid, payoff or training configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A requested allocation exceeds the configured memory cap.
    #[error("resource error: {0}")]
    Resource(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}{}: loss = {loss}", date.map(|d| format!(" (exercise date {d})")).unwrap_or_default())]
    Divergence {
        epoch: usize,
        date: Option<usize>,
        loss: f64,
    },

    #[error("empty training data")]
    EmptyData,

    #[error("numerical integration did not converge: {0}")]
    Integration(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Attach an exercise-date index to a divergence error.
    pub fn at_date(self, date: usize) -> Self {
        match self {
            Error::Divergence { epoch, loss, .. } => Error::Divergence {
                epoch,
                date: Some(date),
                loss,
            },
            other => other,
        }
    }
}
