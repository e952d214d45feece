//! Error type shared by all engine modules.

use thiserror::Error;

/// Errors produced by validation, ingest, solving, and orchestration.
#[derive(Debug, Error)]
pub enum MotorError {
    /// Embedding lengths disagree with each other or with the configured dims.
    #[error("dimension mismatch for {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    /// A query was built with an empty question string.
    #[error("question text is empty")]
    EmptyQuestion,

    /// Bounding box coordinates violate 0 <= min < max <= 1.
    #[error("malformed bounding box: {0}")]
    MalformedBox(String),

    /// A grounded finding has an empty description.
    #[error("finding description is empty")]
    EmptyDescription,

    /// A candidate record has an empty report text.
    #[error("report text is empty for record {0:?}")]
    EmptyReport(String),

    /// Re-rank configuration violates one of its invariants.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An input file failed to parse.
    #[error("parse error in {path} line {line}: {message}")]
    ParseError {
        path: String,
        line: usize,
        message: String,
    },

    /// A record id is present in the records file but absent from the
    /// embeddings file (or is missing one of its required embeddings).
    #[error("missing embedding for id {id:?}: {detail}")]
    MissingEmbedding { id: String, detail: String },

    /// The same record id appears twice in one input.
    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    /// A matrix handed to the OT solver contains NaN or infinite entries.
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    /// Marginal vectors are not strictly positive probability vectors.
    #[error("invalid marginals: {0}")]
    InvalidMarginals(String),

    /// The plain-domain Sinkhorn kernel collapsed to zero; the regularization
    /// is too small for plain mode and the caller should switch to log-domain.
    #[error(
        "numerical underflow in Sinkhorn kernel (gamma too small for plain mode; use log-domain)"
    )]
    NumericalUnderflow,

    /// The brute-force oracle only covers uniform square problems up to n = 6.
    #[error("oracle scope exceeded: {0}")]
    OracleScopeExceeded(String),

    /// A score refers to a record id that does not exist in the store.
    #[error("unknown record id {0:?}")]
    UnknownRecordId(String),

    /// A prompt template names a placeholder the request does not define.
    #[error("unknown placeholder {{{0}}} in prompt template")]
    UnknownPlaceholder(String),

    /// The generation service could not be reached after all retry attempts.
    #[error("generation service unavailable after {attempts} attempts: {last_error}")]
    ServiceUnavailable { attempts: usize, last_error: String },

    /// The generation service answered with a non-success status.
    #[error("generation service error (status {status}): {body}")]
    ServiceError { status: u16, body: String },

    /// Paired ranking lists have different sample counts.
    #[error("misaligned samples: {left} initial lists vs {right} reranked lists")]
    MisalignedSamples { left: usize, right: usize },

    /// A reranked list is not a permutation of its initial list.
    #[error("sample {sample} is not a permutation of its initial ranking")]
    NotAPermutation { sample: usize },

    /// A query has no entry in the planted-relevance map.
    #[error("no planted relevance entry for query {0:?}")]
    MissingQuery(String),

    /// A synthetic corpus spec violates one of its invariants.
    #[error("invalid synthetic corpus spec: {0}")]
    InvalidSpec(String),

    /// A pipeline stage failed; wraps the underlying error with the stage name.
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<MotorError>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MotorError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        MotorError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(stage: &'static str) -> impl FnOnce(MotorError) -> MotorError {
        move |source| MotorError::Stage {
            stage,
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, MotorError>;
