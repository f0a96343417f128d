use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },

    #[error("graph {graph}: {message}")]
    InvalidGraph { graph: String, message: String },

    #[error("penman parse error at offset {offset}: {message}")]
    Penman { offset: usize, message: String },

    #[error("span [{start}, {end}) is invalid for a sentence of {len} tokens")]
    SpanOutOfRange { start: usize, end: usize, len: usize },

    #[error("spans [{0}, {1}) and [{2}, {3}) overlap")]
    OverlappingSpans(usize, usize, usize, usize),

    #[error("{requested} marker pairs requested, at most {max} available")]
    TooManyMarkers { requested: usize, max: usize },

    #[error("span {0} has no representation (lost to truncation)")]
    SpanUnavailable(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("graph has no root node")]
    NoRoot,

    #[error("graph is empty")]
    EmptyGraph,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no positive trigger-argument pairs in corpus")]
    NoPositivePairs,

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("no candidates found")]
    NoCandidates,

    #[error("training data has a single class")]
    SingleClass,

    #[error("item sets differ: {0}")]
    ItemMismatch(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Checkpoint(#[from] crate::persistence::CheckpointError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn graph(graph: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidGraph {
            graph: graph.into(),
            message: message.into(),
        }
    }
}
