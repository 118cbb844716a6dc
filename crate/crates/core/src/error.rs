use std::io;

use thiserror::Error;

use crate::trace::Cell;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cell ({}, {}) is outside the {n}x{n} grid", .cell.i, .cell.j)]
    OutOfGrid { cell: Cell, n: usize },

    /// A statistic is mathematically undefined for the input (zero variance).
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(&'static str),

    #[error("snr needs at least 2 populated classes, found {found}")]
    InsufficientClasses { found: usize },

    #[error("protocol violation: {0}")]
    ProtocolViolation(&'static str),

    #[error("grid of size {0} has no neighbours to estimate a gradient")]
    DegenerateGrid(usize),

    #[error("ill-conditioned fit: {0}")]
    IllConditionedFit(String),

    #[error("parse error in {source_name} at line {line}, column {column}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("malformed trace container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
