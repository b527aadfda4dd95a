//! Convergence bounds for Markov chains that satisfy a drift condition only on a
//! large set, applied to the Gibbs sampler of a hierarchical normal model.

pub mod bound;
pub mod error;
pub mod minorization;
pub mod model;
pub mod numerics;
pub mod report;
pub mod simulation;

pub use error::{Error, Result};
