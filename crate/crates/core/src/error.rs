use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid slot id `{0}` (expected domain.category.name)")]
    InvalidSlotId(String),

    #[error("unknown slot `{0}`")]
    UnknownSlot(String),

    #[error("duplicate slot `{0}` in schema")]
    DuplicateSlot(String),

    #[error("dialog `{0}` has no turns")]
    EmptyDialog(String),

    #[error("dialog `{dialog}`: {message}")]
    InvalidDialog { dialog: String, message: String },

    #[error("turn {turn} out of range for a dialog with {turns} turns")]
    TurnOutOfRange { turn: usize, turns: usize },

    #[error("{op}: shape mismatch (expected {expected}, found {found})")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("no pretrained embedding record for `{0}`")]
    MissingEmbedding(String),

    #[error("embedding record `{key}` has {found} rows, passage has {expected} tokens")]
    EmbeddingRows {
        key: String,
        expected: usize,
        found: usize,
    },

    #[error("embedding dimension mismatch: model expects {expected}, file has {found}")]
    EmbeddingDimension { expected: usize, found: usize },

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("no training examples for the {0} model")]
    EmptyTrainingSet(String),

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("prediction coverage mismatch: {0}")]
    CoverageMismatch(String),

    #[error("misaligned turns: {0}")]
    MisalignedTurns(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }

    /// True for errors caused by the input data rather than by the program
    /// or the environment.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::InvalidSlotId(_)
                | Error::UnknownSlot(_)
                | Error::DuplicateSlot(_)
                | Error::EmptyDialog(_)
                | Error::InvalidDialog { .. }
                | Error::TurnOutOfRange { .. }
                | Error::MissingEmbedding(_)
                | Error::EmbeddingRows { .. }
                | Error::EmbeddingDimension { .. }
                | Error::Format { .. }
                | Error::EmptyTrainingSet(_)
                | Error::ArchitectureMismatch(_)
                | Error::CoverageMismatch(_)
                | Error::MisalignedTurns(_)
        )
    }
}
