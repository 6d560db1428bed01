use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Format(String),

    #[error("energy {energy_kev} keV outside table range [{min_kev}, {max_kev}] keV")]
    EnergyOutOfRange {
        energy_kev: f64,
        min_kev: f64,
        max_kev: f64,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("negative composed density ({rho1}, {rho2}) at pixel ({ix}, {iy})")]
    NegativeDensity {
        ix: usize,
        iy: usize,
        rho1: f64,
        rho2: f64,
    },

    #[error("non-finite polychromatic projection for path integrals ({p1}, {p2}): {reason}")]
    NonFinite { p1: f64, p2: f64, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Geometry(_) | Error::Parameter(_) => ErrorClass::Config,
            Error::Parse { .. }
            | Error::Format(_)
            | Error::EnergyOutOfRange { .. }
            | Error::DimensionMismatch { .. }
            | Error::NegativeDensity { .. }
            | Error::Io { .. } => ErrorClass::Data,
            Error::NonFinite { .. } | Error::Numerical(_) => ErrorClass::Numerical,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
