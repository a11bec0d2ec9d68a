//! Regimes without a genuine trade-off: the driftless-log case, where every
//! price level is eventually reached, and nonincreasing transformed payoffs,
//! where waiting never hurts.

use crate::embedding::{Attainment, RuleKind, StoppingRule};
use crate::error::Result;
use crate::model::{PayoffFn, Shape, TransformedPayoff};
use crate::numerics::log_space;

use super::{Case, Solution, Value};

/// `mu = sigma^2 / 2`: the price hits every level, so the value is
/// `sup U`. Levels of the returned rule are prices.
pub fn solve_degenerate(payoff: &PayoffFn, p0: f64) -> Result<Solution> {
    payoff.validate()?;
    let (sup, argmax) = payoff.supremum();
    let here = payoff.value(p0);
    if sup.is_infinite() {
        let level = p0 * 1e3;
        let mut sol = Solution::new(
            Case::Degenerate,
            Value::Infinite,
            StoppingRule {
                kind: RuleKind::HitLevel { level },
                attainment: Attainment::NotAttaining,
            },
            p0,
        );
        sol.diagnostics.rule_value = Some(payoff.value(level));
        sol.diagnostics.sequence = Some("stop on first hitting price x_n, x_n -> inf".into());
        return Ok(sol.note("payoff unbounded; rule levels are prices"));
    }
    match argmax {
        Some(x_star) if here >= sup => {
            let mut sol = Solution::new(Case::Degenerate, Value::Finite(here), StoppingRule::stop_now(), p0);
            sol.diagnostics.x_star = Some(x_star);
            Ok(sol)
        }
        Some(x_star) => {
            let mut sol = Solution::new(
                Case::Degenerate,
                Value::Finite(sup),
                StoppingRule::optimal(RuleKind::HitLevel { level: x_star }),
                p0,
            );
            sol.diagnostics.x_star = Some(x_star);
            Ok(sol.note("rule levels are prices"))
        }
        None => {
            // supremum approached as x -> inf; report a member of the sequence
            let mut level = p0.max(1.0);
            while sup - payoff.value(level) > 1e-6 * sup.abs().max(1.0) && level < 1e300 {
                level *= 2.0;
            }
            let mut sol = Solution::new(
                Case::Degenerate,
                Value::Supremum(sup),
                StoppingRule {
                    kind: RuleKind::HitLevel { level },
                    attainment: Attainment::NotAttaining,
                },
                p0,
            );
            sol.diagnostics.rule_value = Some(payoff.value(level));
            sol.diagnostics.sequence = Some("stop on first hitting price x_n, x_n -> inf".into());
            Ok(sol.note("supremum of the payoff is not attained; rule levels are prices"))
        }
    }
}

/// Nonincreasing `u`: the value is `u(0+)`, reached by waiting for the
/// state to reach the plateau where `u = u(0+)`, or only in the limit.
pub fn solve_nonincreasing(u: &TransformedPayoff, s: f64) -> Result<Solution> {
    debug_assert_eq!(u.shape(), Shape::Nonincreasing);
    let top = u.value_at_zero();
    if top.is_infinite() {
        let sol = Solution::new(
            Case::NonincreasingPayoff,
            Value::Infinite,
            StoppingRule {
                kind: RuleKind::HoldForever,
                attainment: Attainment::NotAttaining,
            },
            s,
        );
        return Ok(sol.note("u(0+) is infinite; the value is the limit of holding to a growing horizon"));
    }
    let tol = 4.0 * f64::EPSILON * top.abs().max(1.0);
    let on_plateau = |x: f64| u.eval_raw(x) >= top - tol;
    let plateau = plateau_end(u, &on_plateau);
    let mut sol = match plateau {
        Some(level) if s <= level => {
            Solution::new(Case::NonincreasingPayoff, Value::Finite(top), StoppingRule::stop_now(), s)
        }
        Some(level) => {
            let mut sol = Solution::new(
                Case::NonincreasingPayoff,
                Value::Finite(top),
                StoppingRule::optimal(RuleKind::HitLevel { level }),
                s,
            );
            sol.diagnostics.a = Some(level);
            sol
        }
        None => Solution::new(
            Case::NonincreasingPayoff,
            Value::Supremum(top),
            StoppingRule {
                kind: RuleKind::HoldForever,
                attainment: Attainment::NotAttaining,
            },
            s,
        )
        .note("u(x) < u(0+) for every x > 0: no optimal rule, the value is the limit of holding to a growing horizon"),
    };
    sol.offset = 0.0;
    Ok(sol)
}

/// Largest `x` with `u(x) = u(0+)`, if any.
fn plateau_end<P: Fn(f64) -> bool>(u: &TransformedPayoff, on_plateau: &P) -> Option<f64> {
    match u.source() {
        Some(PayoffFn::PiecewiseLinear { .. }) | None => {}
        // the other catalog payoffs are strictly increasing; a numerical
        // plateau would only be rounding
        Some(_) => return None,
    }
    if let Some(PayoffFn::PiecewiseLinear { knots, values, .. }) = u.source() {
        // u = U(x^(1/beta)) with beta < 0 is at its top for x <= y_top^beta
        let top = *values.last().unwrap();
        let i = values.iter().position(|&v| v == top).unwrap();
        return if knots[i] > 0.0 {
            Some(knots[i].powf(u.beta()))
        } else {
            None
        };
    }
    let grid = log_space(1e-12, 1e12, 481);
    let last = grid.iter().rposition(|&x| on_plateau(x))?;
    if last + 1 == grid.len() {
        return None;
    }
    let (mut lo, mut hi) = (grid[last], grid[last + 1]);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if on_plateau(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}
