//! Market parameters, payoff and distortion catalogs, and the change of
//! variables that turns the price process into a driftless martingale.
//!
//! With `beta = (sigma^2 - 2 mu) / sigma^2` the process `S = P^beta` is a
//! martingale, and a payoff `U` of the price becomes `u(x) = U(x^(1/beta))`
//! in the new state. The sign and size of `beta` decide whether `u` is
//! nonincreasing, convex, concave or S-shaped.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::log_space;

/// Drift, volatility and initial price of the geometric Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    pub mu: f64,
    pub sigma: f64,
    pub p0: f64,
}

/// Relative width of the band around `mu = sigma^2 / 2` treated as exact
/// equality. Products like `0.2 * 0.2` do not round to `0.04`.
const DEGENERATE_REL_TOL: f64 = 1e-12;

impl MarketParams {
    pub fn new(mu: f64, sigma: f64, p0: f64) -> Result<Self> {
        let m = Self { mu, sigma, p0 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::InvalidParameter {
                name: "mu",
                value: self.mu,
                reason: "must be finite",
            });
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                value: self.sigma,
                reason: "must be positive and finite",
            });
        }
        if !(self.p0 > 0.0 && self.p0.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "p0",
                value: self.p0,
                reason: "must be positive and finite",
            });
        }
        Ok(())
    }

    /// True when `mu = sigma^2 / 2`, where `ln P` is a driftless Brownian motion.
    pub fn is_degenerate(&self) -> bool {
        let s2 = self.sigma * self.sigma;
        (2.0 * self.mu - s2).abs() <= DEGENERATE_REL_TOL * s2
    }

    /// `(sigma^2 - 2 mu) / sigma^2`, exactly `0` in the degenerate case.
    pub fn beta(&self) -> f64 {
        compute_beta(self)
    }

    /// Initial state of the martingale, `p0^beta`. Equals `1` in the
    /// degenerate case, where the transform is not used.
    pub fn s(&self) -> f64 {
        self.p0.powf(self.beta())
    }
}

pub fn compute_beta(market: &MarketParams) -> f64 {
    if market.is_degenerate() {
        return 0.0;
    }
    let s2 = market.sigma * market.sigma;
    (s2 - 2.0 * market.mu) / s2
}

/// Payoff of the price at the stopping time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffFn {
    /// `(x - strike)^+`
    Call { strike: f64 },
    /// `x^gamma / gamma`
    Power { gamma: f64 },
    /// `ln(1 + x)`
    Log,
    /// `1 - exp(-alpha x)`
    Exponential { alpha: f64 },
    /// `(x/k)^alpha1` below `k`, `(x/k)^alpha2` above.
    SPower { alpha1: f64, alpha2: f64, k: f64 },
    /// Linear interpolation through `(knots[i], values[i])`, constant to the
    /// left of the first knot and continued with `tail_slope` to the right
    /// of the last one.
    PiecewiseLinear {
        knots: Vec<f64>,
        values: Vec<f64>,
        #[serde(default)]
        tail_slope: f64,
    },
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value: v,
            reason: "must be positive and finite",
        })
    }
}

impl PayoffFn {
    pub fn validate(&self) -> Result<()> {
        match self {
            PayoffFn::Call { strike } => positive("strike", *strike),
            PayoffFn::Power { gamma } => {
                if *gamma > 0.0 && *gamma < 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter {
                        name: "gamma",
                        value: *gamma,
                        reason: "must lie in (0, 1)",
                    })
                }
            }
            PayoffFn::Log => Ok(()),
            PayoffFn::Exponential { alpha } => positive("alpha", *alpha),
            PayoffFn::SPower { alpha1, alpha2, k } => {
                positive("k", *k)?;
                positive("alpha2", *alpha2)?;
                if !(*alpha1 >= 1.0 && alpha1.is_finite()) {
                    return Err(Error::InvalidParameter {
                        name: "alpha1",
                        value: *alpha1,
                        reason: "must be at least 1",
                    });
                }
                if *alpha2 > 1.0 {
                    return Err(Error::InvalidParameter {
                        name: "alpha2",
                        value: *alpha2,
                        reason: "must not exceed 1",
                    });
                }
                Ok(())
            }
            PayoffFn::PiecewiseLinear {
                knots,
                values,
                tail_slope,
            } => {
                if knots.is_empty() || knots.len() != values.len() {
                    return Err(Error::InvalidInput(
                        "piecewise_linear needs equally many knots and values, at least one".into(),
                    ));
                }
                if knots[0] < 0.0 || knots.iter().chain(values).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(
                        "piecewise_linear knots must be nonnegative and all entries finite".into(),
                    ));
                }
                if knots.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidInput(
                        "piecewise_linear knots must be strictly increasing".into(),
                    ));
                }
                if values.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::InvalidInput(
                        "piecewise_linear values must be nondecreasing".into(),
                    ));
                }
                if values[0] < 0.0 {
                    return Err(Error::InvalidParameter {
                        name: "values[0]",
                        value: values[0],
                        reason: "payoff must be nonnegative",
                    });
                }
                if !(*tail_slope >= 0.0 && tail_slope.is_finite()) {
                    return Err(Error::InvalidParameter {
                        name: "tail_slope",
                        value: *tail_slope,
                        reason: "must be nonnegative and finite",
                    });
                }
                Ok(())
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            PayoffFn::Call { .. } => "call",
            PayoffFn::Power { .. } => "power",
            PayoffFn::Log => "log",
            PayoffFn::Exponential { .. } => "exponential",
            PayoffFn::SPower { .. } => "s_power",
            PayoffFn::PiecewiseLinear { .. } => "piecewise_linear",
        }
    }

    /// `U(y)` for `y` in `[0, inf]`.
    pub fn value(&self, y: f64) -> f64 {
        match self {
            PayoffFn::Call { strike } => (y - strike).max(0.0),
            PayoffFn::Power { gamma } => y.powf(*gamma) / gamma,
            PayoffFn::Log => y.ln_1p(),
            PayoffFn::Exponential { alpha } => -(-alpha * y).exp_m1(),
            PayoffFn::SPower { alpha1, alpha2, k } => {
                let r = y / k;
                if y <= *k {
                    r.powf(*alpha1)
                } else {
                    r.powf(*alpha2)
                }
            }
            PayoffFn::PiecewiseLinear {
                knots,
                values,
                tail_slope,
            } => {
                let n = knots.len();
                if y <= knots[0] {
                    return values[0];
                }
                if y >= knots[n - 1] {
                    if *tail_slope == 0.0 {
                        return values[n - 1];
                    }
                    return values[n - 1] + tail_slope * (y - knots[n - 1]);
                }
                let i = knots.partition_point(|&k| k <= y) - 1;
                let t = (y - knots[i]) / (knots[i + 1] - knots[i]);
                values[i] + t * (values[i + 1] - values[i])
            }
        }
    }

    fn pl_slope(knots: &[f64], values: &[f64], tail: f64, seg: usize) -> f64 {
        // segment `seg` runs from knots[seg-1] to knots[seg]; 0 is the left flat part
        let n = knots.len();
        if seg == 0 {
            0.0
        } else if seg >= n {
            tail
        } else {
            (values[seg] - values[seg - 1]) / (knots[seg] - knots[seg - 1])
        }
    }

    /// Right derivative `U'(y+)`.
    pub fn deriv_right(&self, y: f64) -> f64 {
        match self {
            PayoffFn::Call { strike } => {
                if y >= *strike {
                    1.0
                } else {
                    0.0
                }
            }
            PayoffFn::Power { gamma } => y.powf(gamma - 1.0),
            PayoffFn::Log => 1.0 / (1.0 + y),
            PayoffFn::Exponential { alpha } => alpha * (-alpha * y).exp(),
            PayoffFn::SPower { alpha1, alpha2, k } => {
                let (a, r) = if y < *k { (*alpha1, y / k) } else { (*alpha2, y / k) };
                a / k * r.powf(a - 1.0)
            }
            PayoffFn::PiecewiseLinear {
                knots,
                values,
                tail_slope,
            } => {
                let seg = knots.partition_point(|&k| k <= y);
                Self::pl_slope(knots, values, *tail_slope, seg)
            }
        }
    }

    /// Left derivative `U'(y-)`.
    pub fn deriv_left(&self, y: f64) -> f64 {
        match self {
            PayoffFn::Call { strike } => {
                if y > *strike {
                    1.0
                } else {
                    0.0
                }
            }
            PayoffFn::SPower { alpha1, alpha2, k } => {
                let (a, r) = if y <= *k { (*alpha1, y / k) } else { (*alpha2, y / k) };
                a / k * r.powf(a - 1.0)
            }
            PayoffFn::PiecewiseLinear {
                knots,
                values,
                tail_slope,
            } => {
                let seg = knots.partition_point(|&k| k < y);
                Self::pl_slope(knots, values, *tail_slope, seg)
            }
            _ => self.deriv_right(y),
        }
    }

    /// Points where `U'` jumps.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            PayoffFn::Call { strike } => vec![*strike],
            PayoffFn::SPower { k, alpha1, alpha2 } if alpha1 != alpha2 || *alpha1 != 1.0 => vec![*k],
            PayoffFn::PiecewiseLinear { knots, .. } => knots.clone(),
            _ => Vec::new(),
        }
    }

    /// Supremum of `U` over `(0, inf)` and, when attained, the smallest
    /// maximizer.
    pub fn supremum(&self) -> (f64, Option<f64>) {
        match self {
            PayoffFn::Exponential { .. } => (1.0, None),
            PayoffFn::PiecewiseLinear {
                knots,
                values,
                tail_slope,
            } => {
                if *tail_slope > 0.0 {
                    return (f64::INFINITY, None);
                }
                let top = *values.last().unwrap();
                let i = values.iter().position(|&v| v == top).unwrap();
                // the smallest maximizer must be strictly positive
                (top, Some(knots[i].max(f64::MIN_POSITIVE)))
            }
            _ => (f64::INFINITY, None),
        }
    }
}

/// Curvature class of a transformed payoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Nonincreasing,
    Convex,
    Concave,
    /// Convex on `[0, theta]`, concave on `[theta, inf)`.
    SShaped { theta: f64 },
    /// Monotone but neither convex, concave nor S-shaped.
    Unclassified,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Nonincreasing => write!(f, "nonincreasing"),
            Shape::Convex => write!(f, "convex"),
            Shape::Concave => write!(f, "concave"),
            Shape::SShaped { theta } => write!(f, "s_shaped(theta={theta})"),
            Shape::Unclassified => write!(f, "unclassified"),
        }
    }
}

/// Catalog shape of `u(x) = U(x^(1/beta))`.
pub fn expected_shape(payoff: &PayoffFn, beta: f64) -> Result<Shape> {
    payoff.validate()?;
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::InvalidParameter {
            name: "beta",
            value: beta,
            reason: "transform requires a finite nonzero beta",
        });
    }
    if beta < 0.0 {
        return Ok(Shape::Nonincreasing);
    }
    let shape = match payoff {
        PayoffFn::Call { strike } => {
            if beta <= 1.0 {
                Shape::Convex
            } else {
                Shape::SShaped {
                    theta: strike.powf(beta),
                }
            }
        }
        PayoffFn::Power { gamma } => {
            if beta <= *gamma {
                Shape::Convex
            } else {
                Shape::Concave
            }
        }
        PayoffFn::Log => {
            if beta < 1.0 {
                Shape::SShaped {
                    theta: (1.0 / beta - 1.0).powf(beta),
                }
            } else {
                Shape::Concave
            }
        }
        PayoffFn::Exponential { alpha } => {
            if beta < 1.0 {
                let p = 1.0 / beta;
                Shape::SShaped {
                    theta: ((p - 1.0) / (alpha * p)).powf(beta),
                }
            } else {
                Shape::Concave
            }
        }
        PayoffFn::SPower { alpha1, alpha2, k } => {
            if beta > *alpha1 {
                Shape::Concave
            } else if beta >= *alpha2 {
                if alpha1 == alpha2 {
                    // single power, linear here since beta = alpha1 = alpha2
                    Shape::Convex
                } else {
                    Shape::SShaped {
                        theta: k.powf(beta),
                    }
                }
            } else if alpha1 == alpha2 {
                Shape::Convex
            } else {
                Shape::Unclassified
            }
        }
        PayoffFn::PiecewiseLinear {
            knots,
            values,
            tail_slope,
        } => classify_piecewise(knots, values, *tail_slope, beta),
    };
    Ok(shape)
}

/// Exact classification of a transformed piecewise-linear payoff from its
/// pieces (each a multiple of `x^(1/beta)`) and the slope jumps at knots.
fn classify_piecewise(knots: &[f64], values: &[f64], tail: f64, beta: f64) -> Shape {
    let n = knots.len();
    let mut slopes = Vec::with_capacity(n + 1);
    for seg in 0..=n {
        slopes.push(PayoffFn::pl_slope(knots, values, tail, seg));
    }
    // (start, end) in x-space of curvature events
    let mut convex: Vec<(f64, f64)> = Vec::new();
    let mut concave: Vec<(f64, f64)> = Vec::new();
    let to_x = |y: f64| y.powf(beta);
    for seg in 0..=n {
        let lo = if seg == 0 { 0.0 } else { to_x(knots[seg - 1]) };
        let hi = if seg == n { f64::INFINITY } else { to_x(knots[seg]) };
        if slopes[seg] > 0.0 && hi > lo {
            if beta < 1.0 {
                convex.push((lo, hi));
            } else if beta > 1.0 {
                concave.push((lo, hi));
            }
        }
        if seg < n {
            let jump = slopes[seg + 1] - slopes[seg];
            let at = to_x(knots[seg]);
            if at == 0.0 {
                continue;
            }
            if jump > 0.0 {
                convex.push((at, at));
            } else if jump < 0.0 {
                concave.push((at, at));
            }
        }
    }
    if concave.is_empty() {
        return Shape::Convex;
    }
    if convex.is_empty() {
        return Shape::Concave;
    }
    let theta = concave.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    if convex.iter().all(|c| c.1 <= theta) {
        Shape::SShaped { theta }
    } else {
        Shape::Unclassified
    }
}

/// Settings for the numerical shape check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeCheck {
    /// Grid runs over `[reference * 1e-4, reference * 1e4]`.
    pub reference: f64,
    pub rel_tol: f64,
    pub points: usize,
}

impl Default for ShapeCheck {
    fn default() -> Self {
        Self {
            reference: 1.0,
            rel_tol: 1e-9,
            points: 512,
        }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Repr {
    Catalog(PayoffFn),
    Custom {
        f: ScalarFn,
        df: ScalarFn,
        label: String,
    },
}

/// The payoff seen in the martingale state, `u(x) = U(x^(1/beta))`,
/// normalized so that `u(0) = 0` when `u` is nondecreasing.
#[derive(Clone)]
pub struct TransformedPayoff {
    repr: Repr,
    beta: f64,
    shape: Shape,
    offset: f64,
    kinks: Vec<f64>,
}

impl fmt::Debug for TransformedPayoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransformedPayoff")
            .field("source", &self.label())
            .field("beta", &self.beta)
            .field("shape", &self.shape)
            .field("offset", &self.offset)
            .finish()
    }
}

/// Builds `u` from a catalog payoff, assigns the catalog shape and checks it
/// numerically on the default grid around `1`.
pub fn transform_payoff(payoff: &PayoffFn, beta: f64) -> Result<TransformedPayoff> {
    TransformedPayoff::new(payoff, beta, None, &ShapeCheck::default())
}

impl TransformedPayoff {
    /// `declared` overrides the catalog shape; either way the shape must pass
    /// the numerical check.
    pub fn new(
        payoff: &PayoffFn,
        beta: f64,
        declared: Option<Shape>,
        check: &ShapeCheck,
    ) -> Result<Self> {
        let catalog = expected_shape(payoff, beta)?;
        let shape = declared.unwrap_or(catalog);
        let raw0 = payoff.value(0.0_f64.powf(1.0 / beta));
        let offset = if beta > 0.0 && raw0.is_finite() { raw0 } else { 0.0 };
        let mut kinks: Vec<f64> = payoff
            .kinks()
            .into_iter()
            .filter(|&y| y > 0.0)
            .map(|y| y.powf(beta))
            .collect();
        kinks.sort_by(|a, b| a.total_cmp(b));
        let t = Self {
            repr: Repr::Catalog(payoff.clone()),
            beta,
            shape,
            offset,
            kinks,
        };
        t.verify(check)?;
        Ok(t)
    }

    /// A payoff given directly in the martingale state, with its right
    /// derivative. `f(0)` is subtracted when finite and `u` nondecreasing.
    pub fn custom<F, D>(label: &str, f: F, df: D, shape: Shape, kinks: Vec<f64>) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let f0 = f(0.0);
        let offset = if shape != Shape::Nonincreasing && f0.is_finite() {
            f0
        } else {
            0.0
        };
        let t = Self {
            repr: Repr::Custom {
                f: Arc::new(f),
                df: Arc::new(df),
                label: label.to_string(),
            },
            beta: 1.0,
            shape,
            offset,
            kinks,
        };
        t.verify(&ShapeCheck::default())?;
        Ok(t)
    }

    pub fn label(&self) -> String {
        match &self.repr {
            Repr::Catalog(p) => p.kind_name().to_string(),
            Repr::Custom { label, .. } => label.clone(),
        }
    }

    pub fn source(&self) -> Option<&PayoffFn> {
        match &self.repr {
            Repr::Catalog(p) => Some(p),
            Repr::Custom { .. } => None,
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// `u(0)` removed by the normalization; add it back to reported values.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Abscissas where `u'` jumps.
    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    /// Normalized `u(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_raw(x) - self.offset
    }

    /// `u(x)` before normalization.
    pub fn eval_raw(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Catalog(p) => {
                if let PayoffFn::Power { gamma } = p {
                    return x.powf(gamma / self.beta) / gamma;
                }
                p.value(x.powf(1.0 / self.beta))
            }
            Repr::Custom { f, .. } => f(x),
        }
    }

    /// Right derivative `u'(x+)`.
    pub fn deriv(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Catalog(p) => {
                if let PayoffFn::Power { gamma } = p {
                    let r = gamma / self.beta;
                    return x.powf(r - 1.0) / self.beta;
                }
                let y = x.powf(1.0 / self.beta);
                let du = if self.beta > 0.0 {
                    p.deriv_right(y)
                } else {
                    p.deriv_left(y)
                };
                if du == 0.0 {
                    return 0.0;
                }
                du * x.powf(1.0 / self.beta - 1.0) / self.beta
            }
            Repr::Custom { df, .. } => df(x),
        }
    }

    /// `u(0+)` before normalization, possibly infinite.
    pub fn value_at_zero(&self) -> f64 {
        self.eval_raw(0.0)
    }

    /// `(c, r)` with normalized `u(x) = c x^r` when `u` is a pure power.
    pub fn power_form(&self) -> Option<(f64, f64)> {
        match &self.repr {
            Repr::Catalog(PayoffFn::Power { gamma }) => Some((1.0 / gamma, gamma / self.beta)),
            _ => None,
        }
    }

    /// `(z0, c, r)` with `u(x) = c x^r + const` for `x >= z0`, when known.
    pub fn power_tail(&self) -> Option<(f64, f64, f64)> {
        match &self.repr {
            Repr::Catalog(PayoffFn::Power { gamma }) => Some((0.0, 1.0 / gamma, gamma / self.beta)),
            Repr::Catalog(PayoffFn::SPower { alpha2, k, .. }) if self.beta > 0.0 => {
                Some((k.powf(self.beta), k.powf(-alpha2), alpha2 / self.beta))
            }
            _ => None,
        }
    }

    /// Numerical shape verification on a log grid; returns the violating
    /// grid points inside the error.
    pub fn verify(&self, check: &ShapeCheck) -> Result<()> {
        let grid = log_space(check.reference * 1e-4, check.reference * 1e4, check.points.max(3));
        let vals: Vec<f64> = grid.iter().map(|&x| self.eval(x)).collect();
        let mut violations = Vec::new();
        let scale = |i: usize| vals[i].abs().max(1e-300);
        // rounding in u dominates divided differences where u is flat
        let noise = |i: usize, j: usize| 8.0 * f64::EPSILON * (scale(i) + scale(j)) / (grid[j] - grid[i]);

        let nondecreasing = self.shape != Shape::Nonincreasing;
        for i in 0..grid.len() - 1 {
            let d = vals[i + 1] - vals[i];
            let tol = check.rel_tol * (scale(i) + scale(i + 1)) + 8.0 * f64::EPSILON * (scale(i) + scale(i + 1));
            let bad = if nondecreasing { d < -tol } else { d > tol };
            if bad || !vals[i].is_finite() && !(i == 0 && !nondecreasing) {
                violations.push(grid[i + 1]);
            }
        }

        let slope = |i: usize| (vals[i + 1] - vals[i]) / (grid[i + 1] - grid[i]);
        for i in 0..grid.len() - 2 {
            let (x0, x2) = (grid[i], grid[i + 2]);
            let (d0, d1) = (slope(i), slope(i + 1));
            let tol = check.rel_tol * d0.abs().max(d1.abs()) + noise(i, i + 1) + noise(i + 1, i + 2);
            let want_convex = match self.shape {
                Shape::Convex => Some(true),
                Shape::Concave => Some(false),
                Shape::SShaped { theta } => {
                    if x2 <= theta {
                        Some(true)
                    } else if x0 >= theta {
                        Some(false)
                    } else {
                        None
                    }
                }
                Shape::Nonincreasing | Shape::Unclassified => None,
            };
            match want_convex {
                Some(true) if d1 < d0 - tol => violations.push(grid[i + 1]),
                Some(false) if d1 > d0 + tol => violations.push(grid[i + 1]),
                _ => {}
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            violations.sort_by(|a, b| a.total_cmp(b));
            violations.dedup();
            Err(Error::shape_mismatch(&self.shape, violations))
        }
    }
}

/// Curvature class of a distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistortionShape {
    Identity,
    Concave,
    Convex,
    /// Concave on `[0, 1 - q]`, convex on `[1 - q, 1]`.
    ReverseS { q: f64 },
    /// Convex on `[0, 1 - q]`, concave on `[1 - q, 1]`.
    SShaped { q: f64 },
}

impl fmt::Display for DistortionShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistortionShape::Identity => write!(f, "identity"),
            DistortionShape::Concave => write!(f, "concave"),
            DistortionShape::Convex => write!(f, "convex"),
            DistortionShape::ReverseS { q } => write!(f, "reverse_s(q={q})"),
            DistortionShape::SShaped { q } => write!(f, "s_shaped(q={q})"),
        }
    }
}

/// Probability distortion `w: [0, 1] -> [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistortionFn {
    Identity,
    /// `p^alpha`
    Power { alpha: f64 },
    /// `2p - 2p^2` on `[0, 1/2]`, `2p^2 - 2p + 1` on `(1/2, 1]`.
    ReverseSQuadratic,
    /// `p^2 / (1 - q)` on `[0, 1 - q]`, `1 - (1 - p)^2 / q` above.
    SQuadratic { q: f64 },
    /// Piecewise linear through `table` points `[p, w(p)]`, concave up to
    /// `1 - q` and convex after.
    ReverseSGeneric { q: f64, table: Vec<[f64; 2]> },
    /// Piecewise linear through `table`, convex up to `1 - q`, concave after.
    SGeneric { q: f64, table: Vec<[f64; 2]> },
}

fn table_slopes(table: &[[f64; 2]]) -> Vec<f64> {
    table
        .windows(2)
        .map(|w| (w[1][1] - w[0][1]) / (w[1][0] - w[0][0]))
        .collect()
}

impl DistortionFn {
    pub fn validate(&self) -> Result<()> {
        match self {
            DistortionFn::Identity | DistortionFn::ReverseSQuadratic => Ok(()),
            DistortionFn::Power { alpha } => positive("alpha", *alpha),
            DistortionFn::SQuadratic { q } => Self::check_q(*q),
            DistortionFn::ReverseSGeneric { q, table } => Self::check_table(*q, table, true),
            DistortionFn::SGeneric { q, table } => Self::check_table(*q, table, false),
        }
    }

    fn check_q(q: f64) -> Result<()> {
        if q > 0.0 && q < 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "q",
                value: q,
                reason: "must lie in (0, 1)",
            })
        }
    }

    fn check_table(q: f64, table: &[[f64; 2]], reverse: bool) -> Result<()> {
        Self::check_q(q)?;
        if table.len() < 2 || table[0] != [0.0, 0.0] || *table.last().unwrap() != [1.0, 1.0] {
            return Err(Error::InvalidInput(
                "distortion table must start at [0, 0] and end at [1, 1]".into(),
            ));
        }
        if table.windows(2).any(|w| !(w[1][0] > w[0][0]) || !(w[1][1] > w[0][1])) {
            return Err(Error::InvalidInput(
                "distortion table must be strictly increasing in both columns".into(),
            ));
        }
        let split = 1.0 - q;
        if !table.iter().any(|p| (p[0] - split).abs() <= 1e-12) {
            return Err(Error::InvalidInput(format!(
                "distortion table must contain the inflection abscissa 1 - q = {split}"
            )));
        }
        let slopes = table_slopes(table);
        for (i, pair) in slopes.windows(2).enumerate() {
            let at = table[i + 1][0];
            let first_part = at < split - 1e-12;
            let ok = match (reverse, first_part) {
                (true, true) | (false, false) => pair[1] <= pair[0] * (1.0 + 1e-12),
                _ => pair[1] >= pair[0] * (1.0 - 1e-12),
            };
            if !ok {
                return Err(Error::InvalidInput(format!(
                    "distortion table slopes violate the declared shape at p = {at}"
                )));
            }
        }
        Ok(())
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            DistortionFn::Identity => "identity",
            DistortionFn::Power { .. } => "power",
            DistortionFn::ReverseSQuadratic => "reverse_s_quadratic",
            DistortionFn::SQuadratic { .. } => "s_quadratic",
            DistortionFn::ReverseSGeneric { .. } => "reverse_s_generic",
            DistortionFn::SGeneric { .. } => "s_generic",
        }
    }

    pub fn shape(&self) -> DistortionShape {
        match self {
            DistortionFn::Identity => DistortionShape::Identity,
            DistortionFn::Power { alpha } => {
                if *alpha == 1.0 {
                    DistortionShape::Identity
                } else if *alpha < 1.0 {
                    DistortionShape::Concave
                } else {
                    DistortionShape::Convex
                }
            }
            DistortionFn::ReverseSQuadratic => DistortionShape::ReverseS { q: 0.5 },
            DistortionFn::SQuadratic { q } => DistortionShape::SShaped { q: *q },
            DistortionFn::ReverseSGeneric { q, .. } => DistortionShape::ReverseS { q: *q },
            DistortionFn::SGeneric { q, .. } => DistortionShape::SShaped { q: *q },
        }
    }

    fn table_eval(table: &[[f64; 2]], p: f64) -> f64 {
        let i = table.partition_point(|t| t[0] <= p).clamp(1, table.len() - 1);
        let (a, b) = (table[i - 1], table[i]);
        a[1] + (p - a[0]) * (b[1] - a[1]) / (b[0] - a[0])
    }

    /// `w(p)`, clamped to `[0, 1]` outside the unit interval.
    pub fn eval(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return 1.0;
        }
        match self {
            DistortionFn::Identity => p,
            DistortionFn::Power { alpha } => p.powf(*alpha),
            DistortionFn::ReverseSQuadratic => {
                if p <= 0.5 {
                    2.0 * p * (1.0 - p)
                } else {
                    let r = 1.0 - p;
                    1.0 - 2.0 * r * (1.0 - r)
                }
            }
            DistortionFn::SQuadratic { q } => {
                let p0 = 1.0 - q;
                if p <= p0 {
                    p * p / p0
                } else {
                    let r = 1.0 - p;
                    1.0 - r * r / q
                }
            }
            DistortionFn::ReverseSGeneric { table, .. } | DistortionFn::SGeneric { table, .. } => {
                Self::table_eval(table, p)
            }
        }
    }

    /// `w'(p)`; at table knots the right derivative (left derivative at `p = 1`).
    pub fn deriv(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self {
            DistortionFn::Identity => 1.0,
            DistortionFn::Power { alpha } => alpha * p.powf(alpha - 1.0),
            DistortionFn::ReverseSQuadratic => (4.0 * p - 2.0).abs(),
            DistortionFn::SQuadratic { q } => {
                let p0 = 1.0 - q;
                if p <= p0 {
                    2.0 * p / p0
                } else {
                    2.0 * (1.0 - p) / q
                }
            }
            DistortionFn::ReverseSGeneric { table, .. } | DistortionFn::SGeneric { table, .. } => {
                let slopes = table_slopes(table);
                let i = table.partition_point(|t| t[0] <= p).clamp(1, table.len() - 1);
                slopes[i - 1]
            }
        }
    }

    /// Points in `(0, 1)` where `w` or `w'` is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            DistortionFn::Identity | DistortionFn::Power { .. } => Vec::new(),
            DistortionFn::ReverseSQuadratic => vec![0.5],
            DistortionFn::SQuadratic { q } => vec![1.0 - q],
            DistortionFn::ReverseSGeneric { table, .. } | DistortionFn::SGeneric { table, .. } => table
                .iter()
                .map(|t| t[0])
                .filter(|&p| p > 0.0 && p < 1.0)
                .collect(),
        }
    }

    /// Inflection parameter `q` (the switch sits at `1 - q`).
    pub fn q(&self) -> Option<f64> {
        match self.shape() {
            DistortionShape::ReverseS { q } | DistortionShape::SShaped { q } => Some(q),
            _ => None,
        }
    }

    pub fn is_convex(&self) -> bool {
        matches!(self.shape(), DistortionShape::Convex | DistortionShape::Identity)
    }

    pub fn is_concave(&self) -> bool {
        matches!(self.shape(), DistortionShape::Concave | DistortionShape::Identity)
    }
}
