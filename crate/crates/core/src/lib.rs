//! Stochastic dynamic network utility maximization.
//!
//! Sites simulate their own contagion dynamics (a pandemic on a social graph
//! or a wildfire on a grid) to estimate how much utility each extra unit of a
//! shared resource buys. Those estimates are fitted with concave
//! non-decreasing piecewise-linear surrogates, and a primal-dual market splits
//! the shared budget between sites. A rolling-horizon controller repeats the
//! estimate/allocate cycle as the ground state evolves.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod contagion;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod horizon;
pub mod market;
mod nnls;
pub mod pandemic;
pub mod par;
pub mod policy;
pub mod protocol;
pub mod rng;
pub mod stats;
pub mod wildfire;

pub use error::{Error, KktResiduals, Result};
