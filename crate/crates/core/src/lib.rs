//! Linear consensus dynamics `X(n+1) = A(n) X(n)` driven by time-varying
//! row-stochastic matrices.
//!
//! The crate simulates such chains and certifies structural properties of
//! individual matrices (self-confidence, cut-balance, balanced asymmetry,
//! weak aperiodicity). It also approximates absolute probability sequences,
//! measures flows between agent subsets, normalizes balanced asymmetric
//! chains through permutations, and reports finite-horizon ergodicity
//! verdicts. Agent indices are 0-based throughout.

pub mod absprob;
pub mod agents;
pub mod analysis;
pub mod chain;
pub mod cli;
pub mod error;
pub mod flow;
pub mod generators;
pub mod matching;
pub mod matrix;
pub mod properties;

pub use agents::AgentSet;
pub use chain::{ChainSpec, StateVector, TailPolicy};
pub use error::{Error, Result};
pub use matrix::StochasticMatrix;
