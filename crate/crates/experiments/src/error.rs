use thiserror::Error;

/// Configuration errors map to exit code 2, everything else to 1.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Runtime(_) => 1,
        }
    }
}

pub(crate) fn config(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

pub(crate) fn runtime(msg: impl Into<String>) -> RunError {
    RunError::Runtime(msg.into())
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Runtime(format!("I/O: {e}"))
    }
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        RunError::Runtime(format!("CSV: {e}"))
    }
}
