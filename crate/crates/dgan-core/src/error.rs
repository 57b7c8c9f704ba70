//! Crate-wide error type. Fallible operations return [`Result`]; validation
//! that should report *all* problems at once (scenario checking) returns a
//! list of violations instead, see [`crate::scene::validate_scenario`].

use crate::scene::AgentId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An agent does not have the observation history an operation needs.
    #[error("agent {agent}: {detail}")]
    InsufficientHistory { agent: AgentId, detail: String },

    /// A value violates its documented range (negative speed, zero length, ...).
    #[error("invalid value: {0}")]
    InvalidValue(String),

    /// Tensor operands do not fit the operation.
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An operation produced NaN or infinity.
    #[error("{op}: non-finite result")]
    NonFinite { op: &'static str },

    /// `Tape::backward` was called twice on the same tape.
    #[error("gradient tape already consumed by a previous backward pass")]
    TapeConsumed,

    /// Backward was requested for a tensor the tape never recorded.
    #[error("backward: loss tensor is not tracked on this tape")]
    Untracked,

    /// A lookup by id or name found nothing.
    #[error("not found: {0}")]
    NotFound(String),

    /// A dataset is too small for the requested operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Two observations claim the same (frame, agent) slot.
    #[error("line {line}: duplicate observation for agent {agent} at frame {frame}")]
    DuplicateObservation { line: usize, frame: i64, agent: AgentId },

    /// A file could not be parsed; `path` names the file or the JSON pointer.
    #[error("parse error at {path}: {detail}")]
    Parse { path: String, detail: String },

    /// A configuration file or flag combination is unusable.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Error {
        Error::Shape { op, detail: detail.into() }
    }
}
