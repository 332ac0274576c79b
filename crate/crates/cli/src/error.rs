use std::fmt;
use std::path::Path;

use qgcomp::ErrorKind;

/// Failure class, which fixes the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Usage,
    Data,
    Numerical,
}

impl Failure {
    pub fn exit_code(self) -> u8 {
        match self {
            Failure::Usage => 1,
            Failure::Data => 2,
            Failure::Numerical => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub failure: Failure,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            failure: Failure::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            failure: Failure::Data,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError {
            failure: Failure::Numerical,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        CliError::usage(format!("cannot write {}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<qgcomp::Error> for CliError {
    fn from(e: qgcomp::Error) -> Self {
        let failure = match e.kind() {
            ErrorKind::Usage => Failure::Usage,
            ErrorKind::Data => Failure::Data,
            ErrorKind::Numerical => Failure::Numerical,
        };
        CliError {
            failure,
            message: e.to_string(),
        }
    }
}
