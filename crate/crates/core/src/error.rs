use std::path::PathBuf;

use crate::space::EntityId;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("entity `{0}` is not present in the embedding space")]
    MissingEntity(EntityId),

    #[error("duplicate entity id `{id}` at line {line}")]
    DuplicateId { id: String, line: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("ragged dimension at record {record}: expected {expected} components, found {found}")]
    RaggedDimension {
        record: usize,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("entity `{0}` belongs to an attribute-defining group and cannot be scored against it")]
    Contamination(EntityId),

    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("rank {achievable} is below the requested {requested} components")]
    RankDeficient { requested: usize, achievable: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("refusing to serialize report: {0}")]
    Serialization(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
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

    /// Wraps `source` as a failure of `stage`, leaving already-wrapped errors untouched.
    pub fn in_stage(stage: &'static str, source: Error) -> Self {
        match source {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Name of the pipeline stage that failed, if the error was raised inside an audit run.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::in_stage(stage, e))
    }
}
