//! Multi-view low-rank ridge regression with a closed-form solver.
//!
//! Trains per-view subspace maps `A_v` together with a shared coefficient
//! matrix `B` by solving a generalized eigenproblem over stacked per-view
//! scatter matrices, then classifies by fusing per-view scores with either
//! the Sum rule or majority Voting. A per-view full-rank ridge baseline, a
//! gradient-descent verification oracle and a CLI experiment harness are
//! included.

pub mod cli;
pub mod data;
pub mod eig;
mod error;
pub mod oracle;
pub mod predict;
pub mod solver;

pub use error::{Error, Result};
