use thiserror::Error;

/// Errors raised by the library. Each variant maps onto one CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller misuse: dimension mismatch, stepping a finished episode, wrong policy kind.
    #[error("usage error: {0}")]
    Usage(String),
    /// Invalid or incomplete configuration, unknown environment, missing files.
    #[error("configuration error: {0}")]
    Config(String),
    /// Non-finite values or singular systems.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Replay buffer does not yet hold enough data; retry after more steps.
    #[error("replay buffer holds {have} transitions, {need} required")]
    Underfull { have: usize, need: usize },
    /// A verification sweep exceeded its tolerance.
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code used by the CLI: 1 config, 2 verification, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) | Error::Json(_) | Error::Usage(_) => 1,
            Error::Verification(_) => 2,
            Error::Numeric(_) | Error::Underfull { .. } => 3,
        }
    }
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::usage(format!("{what}: expected length {want}, got {got}")))
    }
}
