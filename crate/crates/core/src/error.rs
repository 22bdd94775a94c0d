use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample set")]
    EmptySamples,

    #[error("zero-variance sample")]
    ZeroVariance,

    #[error("sample count {n} is below the target band count {target}")]
    TooFewSamples { n: usize, target: usize },

    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("second-order path does not support {0}")]
    UnsupportedSecondOrder(String),

    #[error("divergence detected at step {step}")]
    Divergence { step: u64 },

    #[error("inversion bracket failure")]
    InversionBracket,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unknown model '{0}'")]
    UnknownModel(String),

    #[error("record is not a WGAN trial (model '{0}')")]
    NotWgan(String),

    #[error("missing checkpoint for record {0}")]
    MissingCheckpoint(String),

    #[error("corrupt journal entry at line {line}: {reason}")]
    CorruptJournal { line: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (configs, specs, plans)
    /// rather than by a failure during execution.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::InvalidConfig(_)
                | Error::UnknownModel(_)
                | Error::TooFewSamples { .. }
                | Error::EmptySamples
                | Error::Json(_)
        )
    }
}
