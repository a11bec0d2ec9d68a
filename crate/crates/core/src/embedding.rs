//! Stopping rules that realize a target law of the stopped state.
//!
//! Two-point laws are realized by exiting an interval. General laws with
//! mean `s` are realized by the Azéma–Yor rule: stop as soon as the current
//! state falls to `l(M_t)`, where `M_t` is the running maximum and `l` is the
//! generalized inverse of the barycenter function
//! `Psi(x) = E[X | X >= x]`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bisect_increasing, lin_space, log_space, QuadOptions};
use crate::quantile::{left_inverse, Cdf, Piece, QuantileFn};

/// Whether a rule attains the reported value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attainment {
    Optimal,
    /// Best member of a maximizing sequence; the supremum is not attained.
    NotAttaining,
    /// The rule leaves positive probability of never stopping.
    NotFinite,
}

/// Barycenter function of a target law with mean `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Barycenter {
    pub s: f64,
    /// Infimum of the support.
    pub lower: f64,
    /// Supremum of the support, possibly `+inf`.
    pub upper: f64,
    pub repr: PsiRepr,
}

/// Middle-branch representation of `Psi` on `(lower, upper)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsiRepr {
    /// Degenerate law, no middle branch.
    PointMass,
    /// `Psi(x) = ratio * x` (Pareto laws).
    Linear { ratio: f64 },
    /// Atom `c_bar` at `a` followed by the power tail of the quadratic
    /// reverse-S optimum for the payoff `c x^r`.
    AtomPowerTail { a: f64, c_bar: f64, r: f64 },
    /// Monotone table; beyond the last point `Psi(x) / x` is held constant.
    Table { xs: Vec<f64>, psi: Vec<f64> },
}

/// Points in the tabulated representation.
pub const PSI_TABLE_POINTS: usize = 2048;

impl Barycenter {
    /// `Psi(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.lower {
            return self.s;
        }
        if x >= self.upper {
            return x;
        }
        match &self.repr {
            PsiRepr::PointMass => x.max(self.s),
            PsiRepr::Linear { ratio } => ratio * x,
            PsiRepr::AtomPowerTail { a, c_bar, r } => {
                let k = 2.0 * c_bar - 1.0;
                let rho = x / a;
                (1.0 - r) / (2.0 - r) * a * (rho.powf(2.0 - r) - k.powf(-(2.0 - r) / (1.0 - r)))
                    / (rho.powf(1.0 - r) - 1.0 / k)
            }
            PsiRepr::Table { xs, psi } => table_eval(xs, psi, x),
        }
    }

    /// Stop level `l(m) = sup{x : Psi(x) <= m}` for a running maximum `m`.
    pub fn stop_level(&self, m: f64) -> f64 {
        if m < self.s {
            return 0.0;
        }
        if m >= self.upper {
            return m;
        }
        let inner = match &self.repr {
            PsiRepr::PointMass => m,
            PsiRepr::Linear { ratio } => m / ratio,
            PsiRepr::AtomPowerTail { .. } => {
                // Psi is continuous and increasing on (lower, upper)
                let hi = self.upper;
                if self.eval(hi * (1.0 - 1e-15)) <= m {
                    hi
                } else {
                    bisect_increasing(|x| self.eval(x), m, self.lower, hi, 200)
                }
            }
            PsiRepr::Table { xs, psi } => table_invert(xs, psi, m),
        };
        inner.max(self.lower).min(m.max(self.lower))
    }

    /// Writes `x,psi` rows on the given grid.
    pub fn write_csv<W: Write>(&self, mut out: W, grid: &[f64]) -> std::io::Result<()> {
        writeln!(out, "x,psi")?;
        for &x in grid {
            writeln!(out, "{},{}", x, self.eval(x))?;
        }
        Ok(())
    }

    /// A plotting grid covering the support.
    pub fn default_grid(&self, n: usize) -> Vec<f64> {
        let lo = self.lower.max(1e-12 * self.s) * 0.5;
        let hi = if self.upper.is_finite() {
            self.upper * 1.5
        } else {
            self.lower.max(self.s) * 20.0
        };
        log_space(lo, hi, n)
    }
}

fn table_eval(xs: &[f64], psi: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return psi[0];
    }
    if x >= xs[n - 1] {
        return x * psi[n - 1] / xs[n - 1];
    }
    let i = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let t = (x - x0) / (x1 - x0);
    psi[i - 1] + t * (psi[i] - psi[i - 1])
}

fn table_invert(xs: &[f64], psi: &[f64], m: f64) -> f64 {
    let n = xs.len();
    if m < psi[0] {
        return xs[0];
    }
    let last_ratio = psi[n - 1] / xs[n - 1];
    if m >= psi[n - 1] {
        return m / last_ratio;
    }
    // largest index with psi <= m
    let i = psi.partition_point(|&p| p <= m);
    let (p0, p1) = (psi[i - 1], psi[i]);
    if p1 == p0 {
        return xs[i];
    }
    xs[i - 1] + (m - p0) / (p1 - p0) * (xs[i] - xs[i - 1])
}

/// Kinds of stopping rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleKind {
    StopNow,
    HoldForever,
    /// Stop when the state first reaches `level` from its starting side.
    HitLevel { level: f64 },
    /// Stop on leaving `(a, b)`. `a = 0` means no lower exit; `b = inf`
    /// means no upper exit.
    ExitInterval { a: f64, b: f64 },
    /// Stop when the state falls to `eta` times its running maximum.
    DrawdownFraction { eta: f64 },
    /// Azéma–Yor rule of a target law.
    Barycenter(Barycenter),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    #[serde(flatten)]
    pub kind: RuleKind,
    pub attainment: Attainment,
}

impl StoppingRule {
    pub fn optimal(kind: RuleKind) -> Self {
        Self {
            kind,
            attainment: Attainment::Optimal,
        }
    }

    pub fn stop_now() -> Self {
        Self::optimal(RuleKind::StopNow)
    }

    /// Checks the rule against the initial state `s`.
    pub fn validate(&self, s: f64) -> Result<()> {
        match &self.kind {
            RuleKind::ExitInterval { a, b } => {
                let ok = *a >= 0.0 && a <= &s && s <= *b;
                if !ok {
                    return Err(Error::InvalidRule(format!(
                        "exit interval needs 0 <= a <= s <= b, got a = {a}, s = {s}, b = {b}"
                    )));
                }
                if *a == 0.0 && self.attainment != Attainment::NotFinite && b.is_finite() {
                    return Err(Error::InvalidRule(
                        "a one-sided exit interval must be flagged not_finite".into(),
                    ));
                }
                if a == b && *a != s {
                    return Err(Error::InvalidRule("degenerate interval away from s".into()));
                }
                Ok(())
            }
            RuleKind::DrawdownFraction { eta } => {
                if *eta > 0.0 && *eta <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidRule(format!("drawdown fraction {eta} outside (0, 1]")))
                }
            }
            RuleKind::HitLevel { level } => {
                if *level > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidRule(format!("hit level {level} must be positive")))
                }
            }
            RuleKind::Barycenter(psi) => {
                if (psi.s - s).abs() > 1e-9 * s.max(1.0) {
                    return Err(Error::InvalidRule(format!(
                        "barycenter built for s = {}, simulated from s = {s}",
                        psi.s
                    )));
                }
                Ok(())
            }
            RuleKind::StopNow | RuleKind::HoldForever => Ok(()),
        }
    }
}

/// Law of the state at the exit of `(a, b)` started from `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPointLaw {
    pub a: f64,
    pub b: f64,
    /// `P(S_tau = a) = (b - s) / (b - a)`.
    pub p_a: f64,
    pub p_b: f64,
}

impl TwoPointLaw {
    pub fn mean(&self) -> f64 {
        self.p_a * self.a + self.p_b * self.b
    }

    pub fn cdf(&self) -> Cdf {
        if self.a == self.b || self.p_b == 0.0 {
            Cdf::point_mass(self.a)
        } else if self.p_a == 0.0 {
            Cdf::point_mass(self.b)
        } else {
            Cdf::steps(&[self.a, self.b], &[self.p_a]).expect("valid two-point law")
        }
    }
}

/// Interval exit rule and its stopped law.
pub fn exit_rule(a: f64, b: f64, s: f64) -> Result<(StoppingRule, TwoPointLaw)> {
    if !(a > 0.0 && a <= s && s <= b && b.is_finite()) {
        return Err(Error::InvalidRule(format!(
            "exit interval needs 0 < a <= s <= b < inf, got a = {a}, s = {s}, b = {b}"
        )));
    }
    if a == b {
        let law = TwoPointLaw {
            a: s,
            b: s,
            p_a: 1.0,
            p_b: 0.0,
        };
        return Ok((StoppingRule::stop_now(), law));
    }
    let p_a = (b - s) / (b - a);
    let law = TwoPointLaw {
        a,
        b,
        p_a,
        p_b: 1.0 - p_a,
    };
    Ok((StoppingRule::optimal(RuleKind::ExitInterval { a, b }), law))
}

/// Barycenter function of `F`, which must have mean `s`.
pub fn barycenter(f: &Cdf, s: f64) -> Result<Barycenter> {
    barycenter_of_quantile(&left_inverse(f), s)
}

/// Barycenter function from the quantile representation,
/// `Psi(x) = int_{F(x-)}^1 G / (1 - F(x-))`.
pub fn barycenter_of_quantile(g: &QuantileFn, s: f64) -> Result<Barycenter> {
    let mean = g.budget();
    if !((mean - s).abs() <= 1e-9 * s.abs().max(1e-300)) {
        return Err(Error::MeanMismatch { mean, expected: s });
    }
    let lower = g.lower();
    let upper = g.upper();
    if lower == upper {
        return Ok(Barycenter {
            s,
            lower,
            upper,
            repr: PsiRepr::PointMass,
        });
    }
    if let [Piece::Power {
        scale,
        center,
        sign,
        exponent,
    }] = g.pieces()
    {
        if *center == 1.0 && *sign == -1.0 && *exponent < 0.0 && *exponent > -1.0 {
            // Pareto with index k = -1/exponent: Psi(x) = k/(k-1) x
            let k = -1.0 / exponent;
            let _ = scale;
            return Ok(Barycenter {
                s,
                lower,
                upper,
                repr: PsiRepr::Linear { ratio: k / (k - 1.0) },
            });
        }
    }
    let f = crate::quantile::cdf_of(g);
    let opts = QuadOptions::default();
    let hi = if upper.is_finite() {
        upper
    } else {
        // a quantile level close enough to 1 that the ratio extrapolation holds
        g.eval_t(1e-9)
    };
    let xs: Vec<f64> = if hi / lower.max(1e-300) > 50.0 && lower > 0.0 {
        log_space(lower, hi, PSI_TABLE_POINTS)
    } else {
        lin_space(lower, hi, PSI_TABLE_POINTS)
    };
    let mut psi = Vec::with_capacity(xs.len());
    let mut running = s;
    for (i, &x) in xs.iter().enumerate() {
        let v = if i == 0 {
            s
        } else {
            let p = f.left_limit(x);
            if p >= 1.0 {
                x
            } else {
                g.upper_integral(p, &opts)? / (1.0 - p)
            }
        };
        // monotone correction against quadrature noise
        running = running.max(v).max(x);
        psi.push(running);
    }
    Ok(Barycenter {
        s,
        lower,
        upper,
        repr: PsiRepr::Table { xs, psi },
    })
}

/// Azéma–Yor rule for the law `F` with mean `s`, simplified to an interval
/// exit for two-point laws and to a drawdown rule for Pareto laws.
pub fn azema_yor_rule(f: &Cdf, s: f64) -> Result<StoppingRule> {
    let g = left_inverse(f);
    rule_for_quantile(&g, s)
}

/// Same as [`azema_yor_rule`] from the quantile representation.
pub fn rule_for_quantile(g: &QuantileFn, s: f64) -> Result<StoppingRule> {
    let steps: Option<Vec<f64>> = g
        .pieces()
        .iter()
        .map(|p| match p {
            Piece::Const(v) => Some(*v),
            _ => None,
        })
        .collect();
    if let Some(levels) = &steps {
        if levels.len() == 1 {
            let mean = levels[0];
            if (mean - s).abs() > 1e-9 * s {
                return Err(Error::MeanMismatch { mean, expected: s });
            }
            return Ok(StoppingRule::stop_now());
        }
        if levels.len() == 2 {
            let p_a = g.breaks()[1];
            let mean = p_a * levels[0] + (1.0 - p_a) * levels[1];
            if (mean - s).abs() > 1e-9 * s {
                return Err(Error::MeanMismatch { mean, expected: s });
            }
            return Ok(exit_rule(levels[0], levels[1], s)?.0);
        }
    }
    let psi = barycenter_of_quantile(g, s)?;
    Ok(match psi.repr {
        PsiRepr::PointMass => StoppingRule::stop_now(),
        PsiRepr::Linear { ratio } => {
            let eta = 1.0 / ratio;
            if eta >= 1.0 {
                StoppingRule::stop_now()
            } else {
                StoppingRule::optimal(RuleKind::DrawdownFraction { eta })
            }
        }
        _ => StoppingRule::optimal(RuleKind::Barycenter(psi)),
    })
}

/// Stop level for running maximum `m`.
pub fn invert_barycenter(psi: &Barycenter, m: f64) -> f64 {
    psi.stop_level(m)
}
