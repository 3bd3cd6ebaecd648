use std::fmt;
use std::process::ExitCode;

use cdoc_core::Error;

/// Bad input: config, flags, or arguments rejected by the library.
pub const USAGE: u8 = 2;
/// A solve did not converge or a verification tolerance was missed.
pub const NOT_MET: u8 = 3;
/// Output could not be written.
pub const IO: u8 = 1;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: USAGE,
            message: message.into(),
        }
    }

    pub fn not_met(message: impl Into<String>) -> Self {
        Self {
            code: NOT_MET,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_)
            | Error::InvalidWeights(_)
            | Error::InvalidGrid(_)
            | Error::DimensionMismatch { .. }
            | Error::MissingEvaluator(_)
            | Error::LayoutMismatch { .. } => USAGE,
            _ => NOT_MET,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: IO,
            message: format!("write failed: {e}"),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Self {
            code: IO,
            message: format!("csv write failed: {e}"),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self {
            code: IO,
            message: format!("json write failed: {e}"),
        }
    }
}
