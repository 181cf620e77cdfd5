use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Parse,
    Validation,
    Flow,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("{mask} mask is {got_width}x{got_height}, expected {width}x{height}")]
    DimensionMismatch {
        mask: &'static str,
        width: usize,
        height: usize,
        got_width: usize,
        got_height: usize,
    },

    #[error("{mask} mask value {value} at cell {index} (x={x}, y={y}) is outside [0, 1]")]
    MaskValueOutOfRange {
        mask: &'static str,
        index: usize,
        x: usize,
        y: usize,
        value: f64,
    },

    #[error("empty cooling surface: the cooling mask sums to zero")]
    EmptyCoolingSurface,

    #[error("empty {0} mask")]
    EmptyMask(&'static str),

    #[error("zero-length dispense path")]
    ZeroLengthPath,

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("flow relaxation did not converge at gap level {level} within {iterations} iterations")]
    FlowNonConvergence { level: f64, iterations: usize },

    #[error("amount calibration failed: {0}")]
    Calibration(String),

    #[error("objective evaluation failed at iteration {iteration}: {source}")]
    Evaluation {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse { .. } => ErrorClass::Parse,
            Error::FlowNonConvergence { .. } => ErrorClass::Flow,
            Error::Evaluation { source, .. } => source.class(),
            Error::Io { .. } => ErrorClass::Io,
            _ => ErrorClass::Validation,
        }
    }
}
