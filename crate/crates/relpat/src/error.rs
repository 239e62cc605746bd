use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty vocabulary: no token reached min_count")]
    EmptyVocabulary,

    #[error("table too small: table_size {table_size} < vocabulary size {vocab_size}")]
    TableTooSmall { table_size: usize, vocab_size: usize },

    #[error("relative frequency must lie in (0, 1], got {0}")]
    FrequencyOutOfRange(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("no representation for pattern `{0}`")]
    NoRepresentation(String),

    #[error("uncomputable pattern `{0}`: every token is out of vocabulary")]
    UncomputablePattern(String),

    #[error("encoder `{0}` has no gates")]
    NoGates(&'static str),

    #[error("undefined similarity: zero vector")]
    UndefinedSimilarity,

    #[error("undefined correlation: constant input")]
    UndefinedCorrelation,

    #[error("no pattern occurrences in corpus")]
    NoPatternOccurrences,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("empty input")]
    EmptyInput,

    #[error("training data contains a single class")]
    SingleClass,
}

pub type Result<T> = std::result::Result<T, Error>;
