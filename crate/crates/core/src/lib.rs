//! Optimal stopping of a geometric Brownian motion when the payoff is
//! evaluated by a Choquet (probability-distorted) expectation.

pub mod cli;
pub mod embedding;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod numerics;
pub mod oracle;
pub mod quantile;
pub mod solver;

pub use error::{Error, Result};
