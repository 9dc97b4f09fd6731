use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // emission log
    #[error("commit delays must be non-decreasing: {what} went from {previous} to {next}")]
    NonMonotoneDelay {
        what: &'static str,
        previous: f64,
        next: f64,
    },
    #[error("commit must contain at least one token")]
    EmptyCommit,
    #[error("wall-clock delay {wall} is earlier than ideal delay {ideal}")]
    WallBeforeIdeal { ideal: f64, wall: f64 },
    #[error("emission log is already finalized")]
    Finalized,
    #[error("emission log is not finalized")]
    NotFinalized,
    #[error("commit delay {delay} ms exceeds source duration {source_ms} ms")]
    DelayExceedsSource { delay: f64, source_ms: f64 },

    // agents
    #[error("committed prefix is not a prefix of the decoded hypothesis (position {position})")]
    PrefixConflict { position: usize },
    #[error("attention has shape {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    BadAttentionShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("attention row {row} is not a probability vector: {reason}")]
    NonStochasticRow { row: usize, reason: String },
    #[error("hypothesis carries no attention")]
    MissingAttention,
    #[error("agent protocol error: {0}")]
    ProtocolError(String),
    #[error("agent process closed its stream")]
    AgentCrashed,
    #[error("agent did not answer within {0:?}")]
    Timeout(std::time::Duration),
    #[error("phoneme and prosody tracks differ in length ({phonemes} vs {prosody})")]
    TrackLengthMismatch { phonemes: usize, prosody: usize },
    #[error("unknown prosodic symbol {0:?}")]
    InvalidProsodySymbol(String),
    #[error("estimator-gated handoff requires a dual-track agent")]
    MissingAgent,

    // metrics
    #[error("emission log contains no tokens")]
    EmptyLog,
    #[error("source duration is zero")]
    ZeroDuration,
    #[error("log has no reference tokens")]
    MissingReference,
    #[error("target timeline is empty")]
    EmptyTimeline,
    #[error("corpus sizes differ: {hypotheses} hypotheses vs {references} references")]
    SizeMismatch { hypotheses: usize, references: usize },

    // scheduling
    #[error("TTS request times must be non-decreasing ({previous} then {next})")]
    NonMonotoneRequests { previous: f64, next: f64 },

    // corpus tools
    #[error("{path}:{line}: {message}")]
    ParseError { path: String, line: usize, message: String },
    #[error("duplicate manifest id {0:?}")]
    DuplicateId(String),
    #[error("entry has zero output tokens")]
    ZeroTokens,

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that originate in an agent: its process, its wire
    /// protocol, or a response that breaks the agent contract.
    pub fn is_agent_failure(&self) -> bool {
        matches!(
            self,
            Error::ProtocolError(_)
                | Error::AgentCrashed
                | Error::Timeout(_)
                | Error::PrefixConflict { .. }
                | Error::BadAttentionShape { .. }
                | Error::NonStochasticRow { .. }
                | Error::MissingAttention
                | Error::TrackLengthMismatch { .. }
                | Error::InvalidProsodySymbol(_)
        )
    }
}
