use thiserror::Error;

/// Errors produced by the engine, the data layer and the training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid architecture: {0}")]
    Spec(String),

    #[error("unknown architecture `{0}`")]
    UnknownArch(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
