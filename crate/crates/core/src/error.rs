use thiserror::Error;

/// Stage of the uplink decoder at which a message was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeStage {
    Container,
    Mode,
    Table,
    Payload,
}

impl std::fmt::Display for DecodeStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DecodeStage::Container => "container",
            DecodeStage::Mode => "mode",
            DecodeStage::Table => "frequency table",
            DecodeStage::Payload => "payload",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at local iteration {iteration}{}", worker.map(|w| format!(" on worker {w}")).unwrap_or_default())]
    Diverged {
        iteration: usize,
        worker: Option<usize>,
    },

    #[error("cannot partition {samples} samples across {workers} workers")]
    InfeasiblePartition { workers: usize, samples: usize },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("decode failed at {stage} stage: {reason}")]
    Decode { stage: DecodeStage, reason: String },

    #[error("dataset parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn decode(stage: DecodeStage, reason: impl Into<String>) -> Self {
        Error::Decode {
            stage,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
