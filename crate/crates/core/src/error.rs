use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit index {index} out of range for {num_qubits} qubits")]
    QubitOutOfRange { index: usize, num_qubits: usize },
    #[error("two-qubit gate needs distinct qubits, got {0} twice")]
    SameQubit(usize),
    #[error("matrix is too far from unitary: {0}")]
    NotUnitary(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed trajectory file: {0}")]
    Format(String),
    #[error("metadata mismatch: {0}")]
    Metadata(String),
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("no crossing found: {0}")]
    NoCrossing(String),
    #[error("threshold never reached: {0}")]
    ThresholdNotReached(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
