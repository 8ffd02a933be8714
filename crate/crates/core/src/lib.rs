//! Bayesian sparse-support detection from noisy sparse linear measurements:
//! belief-propagation posteriors, two elementwise detectors and the
//! phase-transition analysis that compares them.

// `!(a > b)` is used on purpose so NaN falls through to the rejecting branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boundary;
pub mod bp;
pub mod channel;
pub mod cli;
pub mod density;
pub mod detectors;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod measurement;
pub mod signal;

pub use error::{Error, Result};
