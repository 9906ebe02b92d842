use std::path::PathBuf;

/// Errors produced by every stage of the matching cascade.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },

    #[error("ground truth for query {query_id} references unknown caption {caption_id}")]
    DanglingReference { query_id: u64, caption_id: u64 },

    #[error("ground truth is not injective: caption {caption_id} is claimed by queries {first} and {second}")]
    NonInjective {
        caption_id: u64,
        first: u64,
        second: u64,
    },

    #[error("dataset has no ground truth")]
    MissingGroundTruth,

    #[error("{what} out of range: {value} (expected {expected})")]
    OutOfRange {
        what: &'static str,
        value: String,
        expected: String,
    },

    #[error("cannot draw {requested} distinct negative pairs, only {available} exist")]
    InsufficientNegatives { requested: usize, available: usize },

    #[error("zero vector supplied as {0}")]
    ZeroVector(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("trailing data: expected {expected} bytes, found {found}")]
    TrailingData { expected: usize, found: usize },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("unknown id {id} ({kind})")]
    UnknownId { kind: &'static str, id: u64 },

    #[error("labeled pairs contain only one label")]
    SingleLabel,

    #[error("score file is missing pair (query {query_id}, caption {caption_id})")]
    MissingPair { query_id: u64, caption_id: u64 },

    #[error("query {0} is missing from the ranking")]
    MissingQuery(u64),

    #[error("no feasible assignment: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn out_of_range(
        what: &'static str,
        value: impl ToString,
        expected: impl ToString,
    ) -> Self {
        Error::OutOfRange {
            what,
            value: value.to_string(),
            expected: expected.to_string(),
        }
    }
}
