use std::path::PathBuf;

/// Errors raised anywhere in the fusion toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("nuclear norm did not converge for channel {channel}")]
    SvdNonConvergence { channel: usize },

    #[error("degenerate fusion weights: {0}")]
    DegenerateWeights(String),

    #[error(
        "non-finite loss at epoch {epoch}, step {step} (batch {batch_ids:?}): \
         pixel={pixel}, grad={grad}, perceptual={perceptual}"
    )]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        batch_ids: Vec<String>,
        pixel: f64,
        grad: f64,
        perceptual: f64,
    },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
