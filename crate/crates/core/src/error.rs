use std::path::PathBuf;

use crate::types::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: malformed JSON: {message}")]
    MalformedJson { line: usize, message: String },

    #[error("line {line}: unknown source tag `{tag}`")]
    UnknownSource { line: usize, tag: String },

    #[error("line {line}: invalid trajectory: {}", join_violations(.violations))]
    InvalidTrajectory {
        line: usize,
        violations: Vec<Violation>,
    },

    #[error("trajectory violates invariants: {}", join_violations(.0))]
    Violations(Vec<Violation>),

    #[error("trajectories span multiple instructions: `{first}` and `{other}`")]
    MixedInstructions { first: String, other: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("no embedding vector for text {0:?}")]
    MissingEmbedding(String),

    #[error("embedding for {text:?} is not unit-normalized (norm {norm})")]
    NonUnitEmbedding { text: String, norm: f64 },

    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    EmbeddingDimension { expected: usize, actual: usize },

    #[error("similarity threshold {xi} outside provider range [{lo}, {hi}]")]
    InvalidThreshold { xi: f64, lo: f64, hi: f64 },

    #[error("malformed tree: {0}")]
    MalformedTree(String),

    #[error("UCB requires a total visit count of at least 1")]
    ZeroTotalVisits,

    #[error("tree has no terminal scores to back up")]
    NoTerminalScores,

    #[error("no visited terminal node is reachable from the root")]
    NoVisitedTerminal,

    #[error("unknown context `{0}`")]
    UnknownContext(String),

    #[error("action `{action}` is not in the vocabulary of context `{context}`")]
    UnknownAction { context: String, action: String },

    #[error("vocabulary mismatch at context `{0}`")]
    VocabularyMismatch(String),

    #[error("loss diverged at step {step} (value {value})")]
    Diverged {
        step: usize,
        value: f64,
        trace: Vec<f64>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown instruction `{0}`")]
    UnknownInstruction(String),

    #[error("enumeration exceeded the cap of {cap} paths")]
    EnumerationCap { cap: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{path}: {message}")]
    Toml { path: PathBuf, message: String },

    #[error("stage `{stage}` failed ({}): {source}", display_paths(.artifacts))]
    Stage {
        stage: String,
        artifacts: Vec<PathBuf>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

fn display_paths(paths: &[PathBuf]) -> String {
    if paths.is_empty() {
        return "no artifacts".to_string();
    }
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
