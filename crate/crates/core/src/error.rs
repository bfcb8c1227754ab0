//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by sequence transitions, strategies, predictors and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("response length must be at least 1")]
    EmptyResponse,

    #[error("step budget must be at least 1")]
    ZeroSteps,

    #[error("prompt must not contain the mask token")]
    MaskInPrompt,

    #[error("step {step} outside [1, {total}]")]
    StepOutOfRange { step: usize, total: usize },

    #[error("no decoding steps remaining")]
    StepsExhausted,

    #[error("position {0} out of bounds")]
    PositionOutOfBounds(usize),

    #[error("duplicate position {0} in unmask choices")]
    DuplicatePosition(usize),

    #[error("position {0} is already decoded")]
    AlreadyDecoded(usize),

    #[error("cannot write the mask token at position {0}")]
    MaskWrite(usize),

    #[error("prediction row has length {found}, expected {expected}")]
    RowLengthMismatch { expected: usize, found: usize },

    #[error("prediction at position {0} is the mask token")]
    MaskPrediction(usize),

    #[error("confidence {value} at position {position} outside [0, 1]")]
    ConfidenceOutOfRange { position: usize, value: f64 },

    #[error("replay step mismatch: trace record at k={found}, state at k={expected}")]
    ReplayStepMismatch { expected: usize, found: usize },

    #[error("replay trace exhausted")]
    TraceExhausted,

    #[error("trace header (L={header_l}, N={header_n}) does not match run (L={run_l}, N={run_n})")]
    TraceHeaderMismatch {
        header_l: usize,
        header_n: usize,
        run_l: usize,
        run_n: usize,
    },

    #[error("cycle endpoint is not set")]
    EndpointUnset,

    #[error("endpoint history is empty")]
    EmptyHistory,

    #[error("no prediction available for the terminal flush")]
    NoRowForFlush,

    #[error("empty record list")]
    EmptyRecords,

    #[error("records and rows differ in length ({records} vs {rows})")]
    TraceLengthMismatch { records: usize, rows: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("metrics cover mismatched seed sets across strategies")]
    MismatchedSeeds,

    #[error("malformed trace: {0}")]
    MalformedTrace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
