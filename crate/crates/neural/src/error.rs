use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] trajmap_core::Error),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("malformed parameter container: {0}")]
    Container(String),
    #[error("missing parameter: {0}")]
    MissingParam(String),
    #[error("non-finite parameter: {0}")]
    NonFiniteParam(String),
    #[error("inconsistent computation: {0}")]
    Inconsistent(String),
    #[error("loss diverged at step {step}: {value}")]
    Diverged { step: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
