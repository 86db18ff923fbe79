//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by map parsing, configuration loading, and samplers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed grid header {line:?}: expected `W H RES_CM`")]
    GridHeader { line: String },

    #[error("grid dimension mismatch: header says {expected} cells, found {found}")]
    GridDimensions { expected: usize, found: usize },

    #[error("unknown grid cell character {ch:?} at line {line}")]
    GridCell { ch: char, line: usize },

    #[error("pose ({x:.1}, {y:.1}) is outside the map bounds")]
    OutOfBounds { x: f64, y: f64 },

    #[error("unknown utterance template id {0}")]
    UnknownTemplate (usize),

    #[error("lattice is not a valid hypothesis graph: {0}")]
    InvalidLattice(String),

    #[error("all particle weights are zero or non-finite")]
    DegenerateWeights,

    #[error("smoothing window holds {have} steps, need {need}")]
    InsufficientHistory { have: usize, need: usize },

    #[error("empty word has no base probability")]
    EmptyWord,

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("sequence lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("reference sequence is empty")]
    EmptyReference,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}
