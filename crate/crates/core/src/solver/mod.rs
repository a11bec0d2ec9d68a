//! Case dispatch and the per-regime solvers.
//!
//! Every solver works with the normalized payoff (`u(0) = 0` when `u` is
//! nondecreasing) and reports values with the offset added back.

mod concave;
mod convex;
mod degenerate;
mod reverse_s;
mod sshaped;

use serde::{Deserialize, Serialize};

use crate::embedding::StoppingRule;
use crate::error::{Error, Result};
use crate::model::{
    DistortionFn, DistortionShape, MarketParams, PayoffFn, Shape, ShapeCheck, TransformedPayoff,
};
use crate::numerics::QuadOptions;
use crate::quantile::{choquet_value_quantile_with, Cdf, QuantileFn};

pub use concave::{solve_concave_concave, solve_power_power};
pub use convex::{solve_convex_u, solve_two_threshold, two_threshold_objective};
pub use degenerate::{solve_degenerate, solve_nonincreasing};
pub use reverse_s::{solve_concave_reverse_s, solve_concave_s, solve_example52, example52_objective};
pub use sshaped::solve_sshaped_reverse_s;

/// Tolerances, grid sizes and caps for the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Absolute quadrature tolerance.
    pub quad_abs_tol: f64,
    /// Integrals beyond this are reported as `+inf`.
    pub divergence_cap: f64,
    /// Points per axis of the two-threshold search grid.
    pub grid_points: usize,
    /// Golden-section iterations per refinement pass.
    pub golden_iters: usize,
    /// Largest upper threshold considered, as a multiple of `s`.
    pub b_cap_max: f64,
    /// Iteration cap of multiplier root finding.
    pub lambda_iters: usize,
    /// Relative residual accepted in the budget equation.
    pub lambda_rel_tol: f64,
    /// Grid points per probability coordinate in the mixed-shape program.
    pub c_grid: usize,
    /// Grid points per level coordinate in the mixed-shape program.
    pub a_grid: usize,
    /// Relative tolerance of the numerical shape check.
    pub shape_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            quad_abs_tol: 1e-10,
            divergence_cap: 1e12,
            grid_points: 400,
            golden_iters: 60,
            b_cap_max: 1e8,
            lambda_iters: 200,
            lambda_rel_tol: 1e-10,
            c_grid: 50,
            a_grid: 60,
            shape_tol: 1e-9,
        }
    }
}

impl SolverOptions {
    pub fn quad(&self) -> QuadOptions {
        QuadOptions {
            abs_tol: self.quad_abs_tol,
            divergence_cap: self.divergence_cap,
            ..QuadOptions::default()
        }
    }
}

/// A stopping problem stated for the price process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub market: MarketParams,
    pub payoff: PayoffFn,
    pub distortion: DistortionFn,
    /// Optional shape declaration for the transformed payoff, checked
    /// numerically instead of the catalog shape.
    #[serde(default)]
    pub declared_shape: Option<Shape>,
    #[serde(default)]
    pub options: SolverOptions,
}

impl ProblemSpec {
    pub fn new(market: MarketParams, payoff: PayoffFn, distortion: DistortionFn) -> Self {
        Self {
            market,
            payoff,
            distortion,
            declared_shape: None,
            options: SolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.payoff.validate()?;
        self.distortion.validate()
    }

    /// Initial state of the martingale.
    pub fn s(&self) -> f64 {
        self.market.s()
    }

    /// The transformed payoff, verified on a grid around `s`.
    pub fn transformed(&self) -> Result<TransformedPayoff> {
        let check = ShapeCheck {
            reference: self.s(),
            rel_tol: self.options.shape_tol,
            points: 512,
        };
        TransformedPayoff::new(&self.payoff, self.market.beta(), self.declared_shape, &check)
    }
}

/// Which regime produced a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    /// `ln P` is a driftless Brownian motion.
    Degenerate,
    /// `u` nonincreasing: hold as long as possible.
    NonincreasingPayoff,
    /// Convex distortion: interval exit.
    TwoThreshold,
    /// Convex transformed payoff.
    ConvexPayoff,
    /// Concave payoff and concave distortion.
    ConcaveConcave,
    /// Power payoff with power distortion, closed form.
    PowerPower,
    /// Concave payoff with reverse-S distortion.
    ConcaveReverseS,
    /// Power payoff with the quadratic reverse-S distortion, one-dimensional
    /// reduction.
    QuadraticReverseS,
    /// Concave payoff with S-shaped distortion.
    ConcaveS,
    /// S-shaped payoff with reverse-S (or concave) distortion.
    SShapedReverseS,
}

impl Case {
    pub fn label(&self) -> &'static str {
        match self {
            Case::Degenerate => "degenerate",
            Case::NonincreasingPayoff => "nonincreasing_payoff",
            Case::TwoThreshold => "two_threshold",
            Case::ConvexPayoff => "convex_payoff",
            Case::ConcaveConcave => "concave_concave",
            Case::PowerPower => "power_power",
            Case::ConcaveReverseS => "concave_reverse_s",
            Case::QuadraticReverseS => "quadratic_reverse_s",
            Case::ConcaveS => "concave_s",
            Case::SShapedReverseS => "s_shaped_reverse_s",
        }
    }
}

/// Optimal value: finite and attained, `+inf`, or a supremum that no
/// admissible rule attains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Value {
    Finite(f64),
    Infinite,
    Supremum(f64),
}

impl Value {
    /// Numeric value, `+inf` for [`Value::Infinite`].
    pub fn as_f64(&self) -> f64 {
        match self {
            Value::Finite(v) | Value::Supremum(v) => *v,
            Value::Infinite => f64::INFINITY,
        }
    }

    pub fn is_attained(&self) -> bool {
        matches!(self, Value::Finite(_))
    }

    fn shifted(self, offset: f64) -> Self {
        match self {
            Value::Finite(v) => Value::Finite(v + offset),
            Value::Supremum(v) => Value::Supremum(v + offset),
            Value::Infinite => Value::Infinite,
        }
    }
}

/// Solver by-products. Levels are in martingale-state units.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub lambda: Option<f64>,
    /// Lower threshold or floor level.
    pub a: Option<f64>,
    /// Upper threshold.
    pub b: Option<f64>,
    /// Mass at the lower threshold.
    pub c: Option<f64>,
    /// Probability level where the quantile leaves its floor.
    pub c_bar: Option<f64>,
    /// Maximizer of the one-dimensional convex-payoff reduction.
    pub x_star: Option<f64>,
    pub eta: Option<f64>,
    pub pareto_index: Option<f64>,
    /// Smallest and largest stopped state.
    pub lower_bound: Option<f64>,
    pub upper_bound: Option<f64>,
    /// Budget of the optimal quantile.
    pub budget: Option<f64>,
    /// Value of the reported rule, when it differs from the optimal value.
    pub rule_value: Option<f64>,
    /// `|J(G*) - value|` recomputed independently.
    pub consistency_residual: Option<f64>,
    pub iterations: usize,
    /// Description of a maximizing sequence when the value is not attained.
    pub sequence: Option<String>,
    pub notes: Vec<String>,
}

/// Result of a solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub case: Case,
    pub value: Value,
    pub g_star: Option<QuantileFn>,
    pub f_star: Option<Cdf>,
    pub rule: StoppingRule,
    pub diagnostics: Diagnostics,
    /// Offset `u(0)` added back to the reported values.
    pub offset: f64,
    /// Initial martingale state.
    pub s: f64,
}

impl Solution {
    pub(crate) fn new(case: Case, value: Value, rule: StoppingRule, s: f64) -> Self {
        Self {
            case,
            value,
            g_star: None,
            f_star: None,
            rule,
            diagnostics: Diagnostics::default(),
            offset: 0.0,
            s,
        }
    }

    pub(crate) fn with_quantile(mut self, g: QuantileFn) -> Self {
        self.diagnostics.budget = Some(g.budget());
        self.diagnostics.lower_bound = Some(g.lower());
        self.diagnostics.upper_bound = Some(g.upper());
        self.f_star = Some(crate::quantile::cdf_of(&g));
        self.g_star = Some(g);
        self
    }

    pub(crate) fn note(mut self, msg: impl Into<String>) -> Self {
        self.diagnostics.notes.push(msg.into());
        self
    }

    /// Adds the payoff offset back to every reported value.
    pub(crate) fn finish(mut self, offset: f64) -> Self {
        self.offset = offset;
        self.value = self.value.shifted(offset);
        if let Some(v) = self.diagnostics.rule_value.as_mut() {
            *v += offset;
        }
        self
    }
}

/// Solves the stopping problem described by `spec`.
pub fn solve(spec: &ProblemSpec) -> Result<Solution> {
    spec.validate()?;
    if spec.market.is_degenerate() {
        return solve_degenerate(&spec.payoff, spec.market.p0);
    }
    let u = spec.transformed()?;
    let sol = solve_transformed(&u, &spec.distortion, spec.s(), &spec.options)?;
    Ok(sol)
}

/// Dispatch on the shapes of `u` and `w` for the martingale problem
/// started at `s`.
pub fn solve_transformed(
    u: &TransformedPayoff,
    w: &DistortionFn,
    s: f64,
    opts: &SolverOptions,
) -> Result<Solution> {
    w.validate()?;
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "s",
            value: s,
            reason: "initial state must be positive and finite",
        });
    }
    let unsupported = |reason: &'static str| Error::UnsupportedRegime {
        payoff: u.shape().to_string(),
        distortion: w.shape().to_string(),
        reason,
    };
    let ws = w.shape();
    let mut sol = match u.shape() {
        Shape::Nonincreasing => solve_nonincreasing(u, s)?,
        Shape::Convex => solve_convex_u(u, w, s, opts)?,
        _ if w.is_convex() => {
            if u.shape() == Shape::Unclassified {
                return Err(unsupported(
                    "the payoff is only piecewise convex; use the oracle for this instance",
                ));
            }
            solve_two_threshold(u, w, s, opts)?
        }
        Shape::Concave => match ws {
            DistortionShape::Concave => {
                if let (Some((c, r)), DistortionFn::Power { alpha }) = (u.power_form(), w) {
                    solve_power_power(c, r, *alpha, s)?.finish(u.offset())
                } else {
                    solve_concave_concave(u, w, s, opts)?
                }
            }
            DistortionShape::ReverseS { .. } => {
                if let (Some((c, r)), DistortionFn::ReverseSQuadratic) = (u.power_form(), w) {
                    solve_example52(c, r, s, opts)?.finish(u.offset())
                } else {
                    solve_concave_reverse_s(u, w, s, opts)?
                }
            }
            DistortionShape::SShaped { .. } => solve_concave_s(u, w, s, opts)?,
            _ => unreachable!("convex distortions handled above"),
        },
        Shape::SShaped { .. } => match ws {
            DistortionShape::ReverseS { .. } | DistortionShape::Concave => {
                solve_sshaped_reverse_s(u, w, s, opts)?
            }
            DistortionShape::SShaped { .. } => {
                return Err(unsupported(
                    "S-shaped payoff with S-shaped distortion has no solver",
                ))
            }
            _ => unreachable!("convex distortions handled above"),
        },
        Shape::Unclassified => {
            return Err(unsupported(
                "the payoff is only piecewise convex; use the oracle for this instance",
            ))
        }
    };
    post_check(&mut sol, u, w, s, opts);
    Ok(sol)
}

/// Recomputes `J(G*)` independently and checks that the budget binds.
fn post_check(sol: &mut Solution, u: &TransformedPayoff, w: &DistortionFn, s: f64, opts: &SolverOptions) {
    let Some(g) = &sol.g_star else { return };
    let Value::Finite(v) = sol.value else { return };
    if let Ok(j) = choquet_value_quantile_with(g, u, w, &opts.quad()) {
        sol.diagnostics.consistency_residual = Some((j + sol.offset - v).abs());
    }
    let b = g.budget();
    if b > s * (1.0 + 1e-9) {
        sol.diagnostics
            .notes
            .push(format!("budget {b} exceeds s = {s}"));
    } else if b < s * (1.0 - 1e-6)
        && matches!(
            sol.case,
            Case::ConcaveConcave | Case::ConcaveReverseS | Case::ConcaveS | Case::SShapedReverseS
        )
    {
        sol.diagnostics
            .notes
            .push(format!("budget does not bind: {b} < s = {s}"));
    }
}
