use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke a documented precondition (shape, range, state).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// The requested construction cannot exist for these dimensions.
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("unsupported attack: {0}")]
    UnsupportedAttack(String),
    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to load {}: {reason}", path.display())]
    Load { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Load {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    /// Stable machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Contract(_) => "contract_violation",
            Error::Config(_) => "config",
            Error::Infeasible(_) => "infeasible",
            Error::UnsupportedAttack(_) => "unsupported_attack",
            Error::Io { .. } => "io",
            Error::Load { .. } => "load",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
