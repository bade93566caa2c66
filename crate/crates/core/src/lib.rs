//! Solver for the LP relaxation of pairwise MRF energy minimization on grid
//! graphs.
//!
//! The master grid is split into two acyclic subgraphs (rows and columns).
//! A dual vector splits the unary potentials between the two halves, and the
//! resulting non-smooth dual lower bound is replaced by a soft-min
//! approximation with smoothing parameter `rho`. Coordinate ascent sweeps
//! ([`strws`]) maximize the smoothed dual, feasible primal points are
//! recovered from chain marginals via small per-edge transportation problems
//! ([`primal`], [`transport`]), and [`schedule`] decides how fast `rho` is
//! driven towards zero. [`driver::solve`] ties these together into a loop
//! that certifies an epsilon-accurate solution through matching primal and
//! dual bounds.

pub mod cli;
pub mod decomposition;
pub mod driver;
pub mod model;
mod numeric;
pub mod oracle;
pub mod primal;
pub mod schedule;
pub mod strws;
pub mod transport;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input (dimension mismatch, out-of-range
    /// label, non-finite potential, bad parameter).
    #[error("input error: {0}")]
    Input(String),
    /// A numeric subroutine failed to reach its required tolerance.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Text-format parse failure with a line-level diagnostic.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
