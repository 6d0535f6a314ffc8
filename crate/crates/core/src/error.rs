use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure raised by an external backend (LLM, embedder, score model).
#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("http transport: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("fixture has no reply for key {0}")]
    MissingFixture(String),
    #[error("{0}")]
    Other(String),
}

impl ProviderError {
    /// Whether resending the same request can reasonably succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Transport(_) => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },

    #[error("unsupported schema_version {found} (expected {expected})")]
    SchemaVersion { found: u64, expected: u64 },

    #[error("duplicate entry id {0:?}")]
    DuplicateId(String),

    #[error("provider error ({context}): {source}")]
    Provider {
        context: String,
        #[source]
        source: ProviderError,
    },

    #[error("decomposition failed: {reason}; raw reply: {raw:?}")]
    Decomposition { reason: String, raw: String },

    #[error("all {attempts} decomposition samples failed: {}", causes.join(" | "))]
    DecompositionExhausted { attempts: usize, causes: Vec<String> },

    #[error("score model failed at step {step}: {message}")]
    ScoreModel { step: usize, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: Option<usize>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.to_string(),
        }
    }

    pub(crate) fn provider(context: impl Into<String>, source: ProviderError) -> Self {
        Error::Provider {
            context: context.into(),
            source,
        }
    }

    /// Coarse category used by front-ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Provider { .. } | Error::Decomposition { .. } | Error::DecompositionExhausted { .. } => {
                ErrorKind::Provider
            }
            Error::Invariant(_) | Error::ScoreModel { .. } => ErrorKind::Internal,
            _ => ErrorKind::Input,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Provider,
    Internal,
}
