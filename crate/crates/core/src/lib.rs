//! Quenched hitting-time statistics for random subshifts of finite type.
//!
//! The crate simulates the randomly time-changed hitting-time point process
//! of cylinder targets under random Gibbs sample measures, and verifies the
//! Poisson limiting behavior together with every exactly checkable bound
//! along the way: expected-count and void-probability conditions,
//! correlation-gap decompositions, mixing and short-return estimators, and
//! the half-turn symmetry / non-mixing demonstrations of the built-in
//! three-symbol system.

pub mod base;
pub mod cli;
pub mod config;
pub mod error;
pub mod gibbs;
pub mod numeric;
pub mod process;
pub mod scenario;
pub mod sft;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
