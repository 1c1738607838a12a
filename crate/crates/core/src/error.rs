use std::path::PathBuf;

use thiserror::Error;

use crate::providers::ProviderError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record in {path} line {line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("no stories found")]
    NoStories,

    #[error("dangling reference: {0}")]
    Dangling(String),

    #[error("duplicate passage for story {story_id} in language {language}")]
    DuplicatePassage { story_id: String, language: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unsupported language pair {src}->{tgt} for provider {provider}")]
    UnsupportedPair {
        src: String,
        tgt: String,
        provider: String,
    },

    #[error("pivot must differ from source and target language ({0})")]
    PivotMustDiffer(String),

    #[error("empty passage")]
    EmptyPassage,

    #[error("empty completion from {0}")]
    EmptyCompletion(String),

    #[error("provider {provider} failed: {source}")]
    Provider {
        provider: String,
        #[source]
        source: ProviderError,
    },

    #[error("translation of story {story_id} into {language} failed: {source}")]
    GridCell {
        story_id: String,
        language: String,
        #[source]
        source: Box<Error>,
    },

    #[error("missing embedding for text hash {0}")]
    MissingEmbedding(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero vector in cosine similarity")]
    ZeroVector,

    #[error("zero variance")]
    ZeroVariance,

    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },

    #[error("missing column: {0}")]
    MissingColumn(String),

    #[error("unknown level {level:?} for term {term}")]
    UnknownLevel { term: String, level: String },

    #[error("fixed-effects design is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("empty condition cell: {0}")]
    EmptyConditionCell(String),

    #[error("malformed annotation output: {0}")]
    MalformedAnnotation(String),

    #[error("missing key {0:?} in annotation output")]
    MissingKey(String),

    #[error("non-binary value for {0:?} in annotation output")]
    NonBinary(String),

    #[error("label coverage mismatch: {0}")]
    CoverageMismatch(String),

    #[error("constant input")]
    ConstantInput,

    #[error("insufficient morals: {0}")]
    InsufficientMorals(String),

    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("session {0} is complete")]
    SessionComplete(String),

    #[error("session {0} is closed")]
    SessionClosed(String),

    #[error("unknown item {item_id} in session {session_id}")]
    UnknownItem { session_id: String, item_id: String },

    #[error("duplicate response for item {item_id} in session {session_id}")]
    DuplicateResponse { session_id: String, item_id: String },

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
