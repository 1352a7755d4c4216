//! Error type shared by all modules, with the failure classes the CLI maps
//! to exit codes.

use std::io;

/// Failure class; the CLI turns this into a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad configuration or arguments (exit 2).
    Config,
    /// File I/O or file-format failure (exit 3).
    Io,
    /// Numeric failure: invalid physical input, guard-band violation,
    /// non-convergence, out-of-band wavelength (exit 4).
    Numeric,
    /// Statistics undefined on the given data, e.g. zero variance or
    /// fewer than two shots (exit 5).
    DegenerateStatistics,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Io => 3,
            ErrorClass::Numeric => 4,
            ErrorClass::DegenerateStatistics => 5,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid pulse: {0}")]
    InvalidPulse(String),

    #[error("invalid medium: {0}")]
    InvalidMedium(String),

    #[error("invalid step control: {0}")]
    InvalidStepControl(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "time-window wraparound: fraction {fraction:.3e} of the pulse energy \
         sits in the outer 5% guard band (limit 1e-6)"
    )]
    GuardBandViolation { fraction: f64 },

    #[error("step control failed to converge: required step {required_step:.3e} m is below 1e-9 m")]
    NonConvergence { required_step: f64 },

    #[error("shot {shot} failed: {source}")]
    ShotFailed {
        shot: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("wavelength out of band: {0}")]
    OutOfBand(String),

    #[error("degenerate statistics: {0}")]
    Degenerate(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("config validation failed:\n{}", .errors.join("\n"))]
    ConfigValidation { errors: Vec<String> },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("bad file format: {0}")]
    Format(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::ConfigParse { .. } | Error::ConfigValidation { .. } => ErrorClass::Config,
            Error::Io { .. } | Error::Format(_) => ErrorClass::Io,
            Error::Degenerate(_) => ErrorClass::DegenerateStatistics,
            Error::ShotFailed { source, .. } => source.class(),
            _ => ErrorClass::Numeric,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class().exit_code()
    }
}

pub type Result<T> = std::result::Result<T, Error>;
