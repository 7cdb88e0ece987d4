//! Solvers for the mismatched distortion-rate function of a finite memoryless source.
//!
//! The decoder commits to a randomized map from an auxiliary alphabet `W` to
//! reconstructions; the encoder then picks the rate-limited coupling that is
//! best for its own cost, breaking ties against the decoder.

// `!(x > 0.0)` deliberately rejects NaN; dense tables read best with indices
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod caratheodory;
#[cfg(feature = "cli")]
pub mod cli;
pub mod envelope;
pub mod error;
mod gibbs;
pub mod grid;
pub mod inner;
pub mod oracle;
pub mod outer;
pub mod prob;
pub mod spec;
pub mod tiebreak;

pub use caratheodory::{reduce_support, ReductionCertificate};
pub use error::{Error, Result};
pub use inner::{
    brute_force_inner, kkt_residual, solve_inner, InnerSolution, KktReport, RateStatus,
    SolverOptions,
};
pub use prob::{CostMatrix, Coupling, Distribution, Kernel};
pub use tiebreak::{brute_force_tiebreak, solve_tiebreak, TiebreakSolution};
