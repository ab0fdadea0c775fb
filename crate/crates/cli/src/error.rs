//! Failure classes and their process exit codes.

use std::fmt;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// Bad flags, config files or output locations.
    Config,
    /// Unreadable or inconsistent input data.
    Data,
    /// The estimation itself failed.
    Numerical,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Config => 2,
            Kind::Data => 3,
            Kind::Numerical => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Config,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Data,
            message: message.into(),
        }
    }

    /// Library errors are numerical when the estimator failed, otherwise
    /// they fall into `fallback`.
    pub fn from_lib(err: dyncov::Error, fallback: Kind) -> Self {
        let kind = if err.is_numerical() { Kind::Numerical } else { fallback };
        Self {
            kind,
            message: err.to_string(),
        }
    }

    pub fn read(path: &Path, err: impl fmt::Display) -> Self {
        Self::data(format!("cannot read {}: {err}", path.display()))
    }

    pub fn write(path: &Path, err: impl fmt::Display) -> Self {
        Self::config(format!("cannot write {}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self.kind {
            Kind::Config => "configuration error",
            Kind::Data => "data error",
            Kind::Numerical => "numerical failure",
        };
        write!(f, "{label}: {}", self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Library calls on the pipeline: numerical failures keep their class,
/// anything else is blamed on the input data.
pub trait LibContext<T> {
    fn data_err(self) -> CliResult<T>;
    fn config_err(self) -> CliResult<T>;
}

impl<T> LibContext<T> for dyncov::Result<T> {
    fn data_err(self) -> CliResult<T> {
        self.map_err(|e| CliError::from_lib(e, Kind::Data))
    }

    fn config_err(self) -> CliResult<T> {
        self.map_err(|e| CliError::from_lib(e, Kind::Config))
    }
}
