use thiserror::Error;

use crate::agents::AgentSet;

/// Errors raised by the library. Agent and row indices are 0-based in the
/// fields; the `Display` text uses the same 0-based convention.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not square: row {row} has {len} entries, expected {expected}")]
    NotSquare {
        row: usize,
        len: usize,
        expected: usize,
    },

    #[error("matrix is empty")]
    Empty,

    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("row {row} sums to 1 {deviation:+e} (tolerance {tol:e})")]
    RowSum {
        row: usize,
        deviation: f64,
        tol: f64,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("exhaustive subset search over {n} agents exceeds the cap of {cap}")]
    SizeBudget { n: usize, cap: usize },

    #[error("resampling budget of {budget} tries exhausted at step {step}")]
    BudgetExhausted { step: usize, budget: usize },

    #[error("jets overlap at step {step}: {overlap}")]
    JetsOverlap { step: usize, overlap: AgentSet },

    #[error("jet is not proper at step {step}")]
    ImproperJet { step: usize },

    #[error(
        "no perfect matching at threshold {delta}: rows {violator} reach only columns {neighbours}"
    )]
    NoPerfectMatching {
        delta: f64,
        violator: AgentSet,
        neighbours: AgentSet,
    },

    #[error("matching failed at step {step}: {source}")]
    MatchingAtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("absolute probability residual {residual:e} at step {step} exceeds {tol:e}")]
    Residual {
        step: usize,
        residual: f64,
        tol: f64,
    },

    #[error("not a probability vector: {0}")]
    NotProbability(String),
}

pub type Result<T> = std::result::Result<T, Error>;
