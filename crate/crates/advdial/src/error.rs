use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto the CLI exit codes: configuration/parse/statistic
/// errors are validation failures (exit 1), shape/numeric/id errors are
/// runtime failures (exit 2), and I/O or file-format errors exit 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid token id {id} for vocabulary of size {vocab}")]
    InvalidId { id: u32, vocab: usize },

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code for the CLI: 1 validation, 2 runtime/numeric, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Undefined(_) => 1,
            Error::Shape(_) | Error::Numeric(_) | Error::InvalidId { .. } => 2,
            Error::Format(_) | Error::Io(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
