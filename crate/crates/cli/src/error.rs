use std::fmt;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or values.
    Usage(String),
    /// Anything that went wrong while doing the work.
    Runtime(anyhow::Error),
    /// One or more self-verification checks failed.
    Verify(usize),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self::Runtime(anyhow::anyhow!(msg.into()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Runtime(_) => EXIT_RUNTIME,
            Self::Verify(_) => EXIT_VERIFY,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Runtime(e) => write!(f, "error: {e:#}"),
            Self::Verify(n) => write!(f, "verification failed: {n} check(s) did not pass"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        Self::Runtime(e)
    }
}

impl From<gsdm_core::Error> for CliError {
    fn from(e: gsdm_core::Error) -> Self {
        Self::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
