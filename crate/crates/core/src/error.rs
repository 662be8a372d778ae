//! Error types shared across the crate.

use thiserror::Error;

/// Problems found while loading or validating a robot configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate id `{id}` in {location}")]
    DuplicateId { id: String, location: String },
    #[error("dangling reference `{id}` in {location}")]
    DanglingReference { id: String, location: String },
    #[error("taxonomy level violation at `{id}`: {reason}")]
    TaxonomyLevel { id: String, reason: String },
    #[error("kind mismatch for `{id}` in {location}: expected {expected}, found {found}")]
    KindMismatch {
        id: String,
        location: String,
        expected: String,
        found: String,
    },
    #[error("invalid {location}: {reason}")]
    Invalid { location: String, reason: String },
}

impl ConfigError {
    pub(crate) fn invalid(location: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Invalid {
            location: location.into(),
            reason: reason.into(),
        }
    }
}

/// Errors raised by the robot domain and the diagnosis session state machine.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("unknown fault `{0}`")]
    UnknownFault(String),
    #[error("unknown sensor `{0}`")]
    UnknownSensor(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("unknown taxonomy node `{0}`")]
    UnknownNode(String),
    #[error("taxonomy node `{0}` is not a leaf")]
    NotALeaf(String),
    #[error("malformed taxonomy around `{0}`")]
    MalformedTaxonomy(String),
    #[error("session already resolved")]
    AlreadyResolved,
    #[error("action-to-read ratio undefined: no sensor reads in the logs")]
    NoReads,
}

/// Dataset generation, filtering, splitting and persistence errors.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("need at least {needed} logs to split, got {got}")]
    TooFewLogs { needed: usize, got: usize },
    #[error("log `{0}` is unresolved; datasets only hold resolved logs")]
    UnresolvedLog(String),
    #[error("duplicate session id `{0}`")]
    DuplicateSession(String),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Serde(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Errors from turning session logs into token sequences.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("unknown {kind} id `{id}`")]
    UnknownId { kind: &'static str, id: String },
    #[error("sensor `{0}` has an empty value range")]
    DegenerateRange(String),
    #[error("token id {id} out of range (vocabulary size {size})")]
    OutOfRange { id: usize, size: usize },
}

/// Errors from the LSTM model, its training loop and checkpoints.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in `{0}`")]
    NonFinite(&'static str),
    #[error("sequence needs at least 2 steps, got {0}")]
    DegenerateSequence(usize),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("training split is empty")]
    EmptyTrainingSet,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint vocabulary hash {found} does not match active config {expected}")]
    VocabularyMismatch { expected: String, found: String },
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("rollout prefix must begin with START")]
    BadPrefix,
    #[error(transparent)]
    Serde(#[from] serde_json::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Errors from the evaluation experiments and report files.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test split is empty")]
    EmptyTestSplit,
    #[error("random baseline needs at least {min} trials, got {got}")]
    TooFewTrials { min: usize, got: usize },
    #[error("horizons and start buckets must be non-empty, with every horizon at least 1")]
    InvalidGrid,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("report I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("report JSON: {0}")]
    Json(#[from] serde_json::Error),
}
