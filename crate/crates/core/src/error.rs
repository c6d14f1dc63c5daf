use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid language tag {0:?}: expected non-empty ASCII lowercase")]
    InvalidTag(String),

    #[error("invalid sentence: {0}")]
    InvalidSentence(String),

    #[error("invalid example: {0}")]
    InvalidExample(String),

    #[error("task mismatch: expected {expected}, found {found}")]
    TaskMismatch { expected: String, found: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty training corpus")]
    EmptyCorpus,

    #[error("token id {0} is out of range for the vocabulary")]
    UnknownId(u32),

    #[error("encoding does not match sentence: {0}")]
    EncodingMismatch(String),

    #[error("answer span {start}..{end} does not fall on word boundaries")]
    AnswerNotAligned { start: usize, end: usize },

    #[error("transducer produced {output:?} for {input:?}; output must be a single non-empty word")]
    TransducerOutput { input: String, output: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("every target in the batch is ignored; loss is undefined")]
    AllTargetsIgnored,

    #[error("stopping rule needs snapshot field `{0}`")]
    MissingSnapshotField(&'static str),

    #[error("length mismatch: {left} predictions vs {right} gold labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("cannot evaluate an empty set of predictions")]
    EmptyEvaluation,

    #[error("invalid pipeline: {0}")]
    Pipeline(String),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
