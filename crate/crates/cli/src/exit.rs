//! Stable process exit codes and the mapping from library errors.

use std::fmt;

use phycosf_core::Error;

pub const OK: i32 = 0;
/// I/O failures and malformed input files.
pub const IO: i32 = 1;
pub const CONFIG: i32 = 2;
pub const TRAINING: i32 = 3;
pub const QUERY_RANGE: i32 = 4;
pub const MISMATCH: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(CONFIG, message)
    }

}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Json(_) => CONFIG,
            Error::Diverged { .. } | Error::NonFinite { .. } => TRAINING,
            Error::OutOfRange { .. } => QUERY_RANGE,
            Error::WavelengthMismatch { .. } | Error::InvalidDimensions(_) => MISMATCH,
            Error::Contract(_)
            | Error::TooLarge { .. }
            | Error::LengthMismatch { .. }
            | Error::NonMonotoneWavelengths { .. }
            | Error::NonFinitePayload { .. }
            | Error::Header { .. }
            | Error::Io { .. } => IO,
        };
        CliError::new(code, e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::new(IO, format!("{}: {e}", path.display()))
}
