use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape disagreement in a numeric op. Carries the op name and both shapes.
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Argument outside the documented domain of an op.
    #[error("invalid argument to `{op}`: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    /// Token id outside the vocabulary it is used against.
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    /// Vocabulary construction / lookup problems.
    #[error("vocabulary error: {0}")]
    Vocab(String),

    /// Corpus file problems (mismatched line counts, empty corpus, ...).
    #[error("corpus error: {0}")]
    Corpus(String),

    /// Checkpoint parse or compatibility failure.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Bad configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// I/O with file context.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
