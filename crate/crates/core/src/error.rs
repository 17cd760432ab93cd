use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("mode {mode} out of range for an order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("matrices disagree on column count: expected {expected}, found {found}")]
    ColumnMismatch { expected: usize, found: usize },

    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("column {column} of mode {mode} has zero norm")]
    ZeroColumn { mode: usize, column: usize },

    #[error("coupling violated: {0}")]
    Coupling(String),

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("input must be nonnegative and finite: {0}")]
    InvalidInput(String),

    #[error("rank {rank} is infeasible: {reason}")]
    RankInfeasible { rank: usize, reason: String },

    #[error("non-finite value at iteration {iteration}, block {block}")]
    NonFinite { iteration: usize, block: usize },

    #[error("zero Lipschitz constant with nonzero gradient ({0})")]
    DegenerateLipschitz(String),

    #[error("rank-deficient matrix: {0}")]
    RankDeficient(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
