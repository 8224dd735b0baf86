use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),

    #[error("unknown document id {0}")]
    UnknownDoc(String),

    #[error("document `{0}` is empty")]
    EmptyDocument(String),

    #[error("term id {0} is out of range")]
    TermOutOfRange(usize),

    #[error("query has no in-vocabulary terms")]
    NoVocabularyTerms,

    #[error("query language model is empty")]
    EmptyQueryModel,

    #[error("feedback set is empty")]
    EmptyFeedback,

    #[error("training set has no usable queries")]
    NoUsableQueries,

    #[error("unigram table is all zero")]
    DegenerateUnigram,

    #[error("vocabulary is empty")]
    EmptyVocabulary,

    #[error("non-positive weight {weight} for term {term}")]
    NonPositiveWeight { term: usize, weight: f64 },

    #[error("target distribution is empty")]
    EmptyTarget,

    #[error("both positive and negative sample sets are empty")]
    EmptySamples,

    #[error("operation requires a {expected} model, found {found}")]
    WrongModelKind { expected: &'static str, found: &'static str },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
