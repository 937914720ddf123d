use std::path::PathBuf;

/// Errors raised across data generation, I/O, the network and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("state error: {0}")]
    State(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("adapter `{adapter}` cannot parse {}: {reason}", path.display())]
    Adapter {
        adapter: String,
        path: PathBuf,
        reason: String,
    },

    #[error("non-finite loss {value} at epoch {epoch}, batch [{batch}]")]
    NonFiniteLoss {
        epoch: usize,
        batch: String,
        value: f64,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("pfm format: {0}")]
    Pfm(String),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
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

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}

pub(crate) use config_err;
pub(crate) use shape_err;
