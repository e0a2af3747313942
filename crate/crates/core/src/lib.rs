//! Counting statistics of Markovian open quantum systems.
//!
//! The core path solves the steady-state hierarchy of derivatives of the
//! tilted density matrix and assembles scaled cumulants of the number of
//! jumps on one dissipation channel. Three independent backends cross-check
//! it: the dominant eigenvalue of the tilted generator ([`ldf`]), a
//! covariance hierarchy for linear bosonic networks ([`gaussian`]) and
//! quantum-jump Monte Carlo ([`trajectories`]).

pub mod error;
pub mod hilbert;
mod linalg;
pub mod liouville;
pub mod cumulants;
pub mod ldf;
pub mod gaussian;
pub mod trajectories;
pub mod models;
pub mod cli;

pub use error::{Error, Result};
pub use faer::c64;
