//! Exit-code discipline for batch use: configuration problems, scheme
//! blow-ups, and filesystem failures each map to a distinct process exit
//! code, with a one-line diagnostic on stderr naming the offending
//! parameter or step.

use std::fmt;

use sdde::{AnalysisError, BrownianError, SchemeError, TruncationError};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration, rejected before any simulation work.
    Config(String),
    /// The scheme produced a non-finite state mid-run.
    BlowUp(String),
    /// The output directory or a result file could not be written.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::BlowUp(_) => EXIT_BLOWUP,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "invalid configuration: {msg}"),
            CliError::BlowUp(msg) => write!(f, "simulation blow-up: {msg}"),
            CliError::Io(msg) => write!(f, "i/o failure: {msg}"),
        }
    }
}

impl From<SchemeError> for CliError {
    fn from(e: SchemeError) -> Self {
        match e {
            SchemeError::BlowUpAt { .. }
            | SchemeError::NonFinitePre
            | SchemeError::Truncation(TruncationError::NonFiniteState) => {
                CliError::BlowUp(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Scheme(s) => CliError::from(s),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<TruncationError> for CliError {
    fn from(e: TruncationError) -> Self {
        match e {
            TruncationError::NonFiniteState => CliError::BlowUp(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<BrownianError> for CliError {
    fn from(e: BrownianError) -> Self {
        CliError::Config(e.to_string())
    }
}
