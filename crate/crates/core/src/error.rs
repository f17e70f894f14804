use std::io;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("no MAC counter installed on this thread")]
    CounterDisabled,

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}
