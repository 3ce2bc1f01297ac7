//! Harness-level error type shared by config, checkpoint, metrics, and the
//! runner.

use std::fmt;
use std::io;

#[derive(Debug)]
pub enum HarnessError {
    Io(io::Error),
    Config(String),
    Checkpoint(String),
    Schema(String),
    Invalid(String),
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Io(e) => write!(f, "io error: {e}"),
            HarnessError::Config(msg) => write!(f, "config error: {msg}"),
            HarnessError::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            HarnessError::Schema(msg) => write!(f, "schema error: {msg}"),
            HarnessError::Invalid(msg) => write!(f, "invalid argument: {msg}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<io::Error> for HarnessError {
    fn from(e: io::Error) -> Self {
        HarnessError::Io(e)
    }
}
