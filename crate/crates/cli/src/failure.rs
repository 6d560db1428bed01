use std::fmt;

use dsct::ErrorClass;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

/// A failed run: the stage it failed in, a message and the process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub stage: &'static str,
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(stage: &'static str, message: impl Into<String>) -> Self {
        Self { stage, code: EXIT_CONFIG, message: message.into() }
    }

    pub fn data(stage: &'static str, message: impl Into<String>) -> Self {
        Self { stage, code: EXIT_DATA, message: message.into() }
    }

    pub fn from_core(stage: &'static str, err: dsct::Error) -> Self {
        let code = match err.class() {
            ErrorClass::Config => EXIT_CONFIG,
            ErrorClass::Data => EXIT_DATA,
            ErrorClass::Numerical => EXIT_NUMERICAL,
        };
        Self { stage, code, message: err.to_string() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for Failure {}

pub type CliResult<T> = Result<T, Failure>;

/// Attaches a stage to core errors.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T> Stage<T> for dsct::Result<T> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| Failure::from_core(stage, e))
    }
}
