use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid depth range: dmin={dmin} must be positive and below dmax={dmax}")]
    InvalidRange { dmin: f64, dmax: f64 },

    #[error("at least 2 depth levels are required, got {0}")]
    TooFewLevels(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient in parameter `{0}`; step rejected")]
    NonFiniteGradient(String),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error in {source_name} at offset {offset}: {message}")]
    Parse {
        source_name: String,
        offset: u64,
        message: String,
    },

    #[error("missing data: {0}")]
    Missing(String),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(source_name: impl Into<String>, offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            offset,
            message: message.into(),
        }
    }

    /// True for errors caused by user-supplied configuration rather than input data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidRange { .. } | Error::TooFewLevels(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
