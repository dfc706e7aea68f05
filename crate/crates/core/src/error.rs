use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error category, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or arguments.
    Config,
    /// Malformed input data.
    Format,
    /// Input was well formed but the pipeline cannot proceed on it.
    Degenerate,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("insufficient steps: need {needed}, found {available} (short by {})", needed - available)]
    InsufficientSteps { needed: usize, available: usize },

    #[error("phase detection failed: {0}")]
    PhaseDetection(String),

    #[error("profiles not aligned: {0}")]
    Alignment(String),

    #[error("degenerate profile: {0}")]
    DegenerateProfile(String),

    #[error("phase inconsistency: {0}")]
    PhaseInconsistency(String),

    #[error("underdetermined fit: {0}")]
    UnderdeterminedFit(String),

    #[error("step response analysis failed: {0}")]
    Analysis(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("clock error: expected t = {expected}, got {got}")]
    Clock { expected: f64, got: f64 },

    #[error("incomplete score grid: {0}")]
    IncompleteGrid(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Input(_) => ErrorKind::Config,
            Error::Parse { .. }
            | Error::Format(_)
            | Error::EmptyInput(_)
            | Error::InvalidTrace(_)
            | Error::IncompleteGrid(_)
            | Error::Json(_) => ErrorKind::Format,
            Error::InsufficientSteps { .. }
            | Error::PhaseDetection(_)
            | Error::Alignment(_)
            | Error::DegenerateProfile(_)
            | Error::PhaseInconsistency(_)
            | Error::UnderdeterminedFit(_)
            | Error::Analysis(_)
            | Error::Clock { .. } => ErrorKind::Degenerate,
            Error::Io(_) => ErrorKind::Io,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse {
                line,
                msg: format!("{other:?}"),
            },
        }
    }
}
