//! Error type shared by every module of the crate.

use std::io;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("function is not deterministic: two evaluations at the same point gave {first} and {second}")]
    Determinism { first: f64, second: f64 },

    #[error("degenerate (zero-norm) vector")]
    DegenerateVector,

    #[error("empty triplet store")]
    EmptyStore,

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("missing embedding for id {0:?}")]
    MissingEmbedding(String),

    #[error("no co-occurrence statistics for triplet index {0}")]
    MissingStats(usize),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("vocabulary error on line {line}: unknown {field} {token:?}")]
    Vocabulary {
        line: usize,
        field: &'static str,
        token: String,
    },

    #[error("duplicate id {0:?}")]
    Duplicate(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Shape { op, lhs, rhs }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    /// True for failures of numeric invariants (shape, finiteness, gradient
    /// determinism, matrix invariants) as opposed to data or format problems.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Shape { .. }
                | Error::NonFinite(_)
                | Error::Determinism { .. }
                | Error::DegenerateVector
                | Error::Invariant(_)
        )
    }
}
