use std::io;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("internal consistency error: {0}")]
    Internal(String),
    #[error("loss evaluator is not deterministic: {first} != {second}")]
    Determinism { first: f64, second: f64 },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("token id {id} is outside a vocabulary of size {size}")]
    OutOfVocabulary { id: usize, size: usize },
    #[error("pointer has no unmasked source position")]
    EmptySupport,
    #[error("invalid training instance: {0}")]
    InvalidInstance(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error("checkpoint incompatible with model: {0}")]
    Incompatible(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
