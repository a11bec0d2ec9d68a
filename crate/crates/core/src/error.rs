use thiserror::Error;

use crate::model::Shape;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Numerical shape verification disagreed with the declared shape.
    #[error("shape verification failed for declared shape {declared}: {} violating grid point(s), first at x = {first:.6e}", violations.len())]
    ShapeMismatch {
        declared: String,
        violations: Vec<f64>,
        first: f64,
    },

    #[error("unsupported regime: transformed payoff is {payoff}, distortion is {distortion} ({reason})")]
    UnsupportedRegime {
        payoff: String,
        distortion: String,
        reason: &'static str,
    },

    #[error("quadrature did not converge: partial value {partial:.12e}, achieved error {achieved:.3e}")]
    Quadrature { partial: f64, achieved: f64 },

    #[error("no Lagrange multiplier satisfies the budget equation: {0}")]
    NoMultiplier(String),

    #[error("empty feasible set: {0}")]
    Infeasible(String),

    #[error("optimizer did not converge; best incumbent value {best:.12e}")]
    NonConvergence { best: f64 },

    #[error("target law has mean {mean:.12e}, expected {expected:.12e}")]
    MeanMismatch { mean: f64, expected: f64 },

    #[error("stopping rule invalid: {0}")]
    InvalidRule(String),
}

impl Error {
    pub(crate) fn shape_mismatch(declared: &Shape, violations: Vec<f64>) -> Self {
        let first = violations.first().copied().unwrap_or(f64::NAN);
        Error::ShapeMismatch {
            declared: declared.to_string(),
            violations,
            first,
        }
    }
}
