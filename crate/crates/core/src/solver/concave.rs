//! Concave payoff with concave distortion: the relaxed Lagrangian gives
//! `G*(x) = (u')^{-1}(lambda / w'(1 - x))` with `lambda` fixed by the budget.

use std::sync::Arc;

use crate::embedding::{rule_for_quantile, Attainment, RuleKind, StoppingRule};
use crate::error::{Error, Result};
use crate::model::{DistortionFn, TransformedPayoff};
use crate::numerics::{integrate_pieces, root_decreasing_log};
use crate::quantile::{choquet_value_quantile_with, EnvelopeInverse, Piece, QuantileFn};

use super::{Case, Solution, SolverOptions, Value};

/// Closed form for `u(x) = c x^r` and `w(p) = p^alpha`, `0 < r < 1`,
/// `0 < alpha <= 1`.
pub fn solve_power_power(c: f64, r: f64, alpha: f64, s: f64) -> Result<Solution> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidParameter {
            name: "r",
            value: r,
            reason: "payoff exponent must lie in (0, 1)",
        });
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            value: alpha,
            reason: "concave power distortion needs 0 < alpha <= 1",
        });
    }
    if alpha == 1.0 {
        let mut sol = Solution::new(Case::PowerPower, Value::Finite(c * s.powf(r)), StoppingRule::stop_now(), s)
            .with_quantile(QuantileFn::constant(s));
        sol.diagnostics.eta = Some(1.0);
        sol.diagnostics.lambda = Some(c * r * s.powf(r - 1.0));
        return Ok(sol);
    }
    if alpha > r {
        let scale = s * (alpha - r) / (1.0 - r);
        let tail = (1.0 - alpha) / (1.0 - r);
        let eta = (alpha - r) / (1.0 - r);
        let value = c * alpha * scale.powf(r) * (1.0 - r) / (alpha - r);
        let mut sol = Solution::new(
            Case::PowerPower,
            Value::Finite(value),
            StoppingRule::optimal(RuleKind::DrawdownFraction { eta }),
            s,
        )
        .with_quantile(QuantileFn::pareto_like(scale, tail));
        sol.diagnostics.lambda = Some(c * r * alpha * scale.powf(r - 1.0));
        sol.diagnostics.eta = Some(eta);
        sol.diagnostics.pareto_index = Some((1.0 - r) / (1.0 - alpha));
        sol.diagnostics.budget = Some(s);
        return Ok(sol);
    }
    if alpha < r {
        let eta = 0.5 * (1.0 - alpha / r);
        let mut sol = Solution::new(
            Case::PowerPower,
            Value::Infinite,
            StoppingRule {
                kind: RuleKind::DrawdownFraction { eta },
                attainment: Attainment::NotAttaining,
            },
            s,
        )
        .with_quantile(QuantileFn::pareto_like(eta * s, 1.0 - eta));
        sol.diagnostics.eta = Some(eta);
        sol.diagnostics.rule_value = Some(f64::INFINITY);
        return Ok(sol.note("the drawdown witness already has infinite value"));
    }
    // alpha == r: every drawdown rule is finite, their values are unbounded
    let n = 100.0_f64;
    let mut sol = Solution::new(
        Case::PowerPower,
        Value::Infinite,
        StoppingRule {
            kind: RuleKind::DrawdownFraction { eta: 1.0 / n },
            attainment: Attainment::NotAttaining,
        },
        s,
    );
    sol.diagnostics.eta = Some(1.0 / n);
    sol.diagnostics.rule_value = Some(c * s.powf(r) * n.powf(1.0 - r));
    sol.diagnostics.sequence = Some(format!(
        "G_n(x) = (s/n) (1 - x)^(1/n - 1), J(G_n) = {c} s^{r} n^{}, shown for n = {n}",
        1.0 - r
    ));
    Ok(sol.note("no optimal rule: the value is +inf along drawdown fractions 1/n"))
}

/// `G_lambda` in `t = 1 - x`.
fn envelope_quantile(u: &TransformedPayoff, w: &DistortionFn, lambda: f64) -> Arc<dyn Fn(f64) -> f64 + Send + Sync> {
    let u = u.clone();
    let w = w.clone();
    Arc::new(move |t: f64| EnvelopeInverse::new(&u).lower(lambda / w.deriv(t)))
}

/// Budget `phi(lambda) = int_0^1 G_lambda`.
pub(crate) fn envelope_budget(u: &TransformedPayoff, w: &DistortionFn, lambda: f64, opts: &SolverOptions) -> f64 {
    let env = EnvelopeInverse::new(u);
    let br = w.breakpoints();
    integrate_pieces(|t| env.lower(lambda / w.deriv(t)), 0.0, 1.0, &br, &opts.quad()).unwrap_or(f64::INFINITY)
}

/// Brackets and solves `phi(lambda) = s`. `Ok(None)` when `phi(0+) <= s`;
/// `Err` when `phi` is infinite for every `lambda`.
pub(crate) fn solve_multiplier<F: Fn(f64) -> f64>(phi: F, s: f64, opts: &SolverOptions) -> Result<Option<f64>> {
    let mut lo = 1.0;
    let mut tries = 0;
    while phi(lo) <= s {
        lo *= 1e-3;
        tries += 1;
        if tries > 100 {
            return Ok(None);
        }
    }
    let mut hi = lo.max(1.0);
    let mut tries = 0;
    while phi(hi) >= s {
        hi *= 10.0;
        tries += 1;
        if tries > 300 || !hi.is_finite() {
            return Err(Error::NoMultiplier(format!(
                "budget stays at or above s = {s} for every multiplier"
            )));
        }
    }
    Ok(root_decreasing_log(phi, s, lo, hi, opts.lambda_rel_tol, opts.lambda_iters))
}

/// Drawdown witnesses `G_eta(x) = eta s (1 - x)^(eta - 1)`; returns the first
/// with infinite value.
pub(crate) fn infinite_witness(
    u: &TransformedPayoff,
    w: &DistortionFn,
    s: f64,
    opts: &SolverOptions,
) -> Option<(f64, QuantileFn)> {
    for eta in [0.5, 0.2, 0.1, 0.05, 0.02, 0.01] {
        let g = QuantileFn::pareto_like(eta * s, 1.0 - eta);
        if let Ok(j) = choquet_value_quantile_with(&g, u, w, &opts.quad()) {
            if j.is_infinite() {
                return Some((eta, g));
            }
        }
    }
    None
}

/// Concave `u`, concave `w`.
pub fn solve_concave_concave(
    u: &TransformedPayoff,
    w: &DistortionFn,
    s: f64,
    opts: &SolverOptions,
) -> Result<Solution> {
    let phi = |lam: f64| envelope_budget(u, w, lam, opts);
    let lambda = match solve_multiplier(phi, s, opts) {
        Ok(Some(l)) => l,
        Ok(None) => {
            let mut sol = Solution::new(Case::ConcaveConcave, Value::Finite(u.eval(s)), StoppingRule::stop_now(), s)
                .with_quantile(QuantileFn::constant(s));
            sol.diagnostics.lambda = Some(0.0);
            return Ok(sol.note("budget slack at lambda = 0: u is satiated below s").finish(u.offset()));
        }
        Err(e) => {
            return match infinite_witness(u, w, s, opts) {
                Some((eta, g)) => {
                    let mut sol = Solution::new(
                        Case::ConcaveConcave,
                        Value::Infinite,
                        StoppingRule {
                            kind: RuleKind::DrawdownFraction { eta },
                            attainment: Attainment::NotAttaining,
                        },
                        s,
                    )
                    .with_quantile(g);
                    sol.diagnostics.eta = Some(eta);
                    sol.diagnostics.rule_value = Some(f64::INFINITY);
                    Ok(sol.note("no Lagrange multiplier; a drawdown witness has infinite value"))
                }
                None => Err(e),
            };
        }
    };
    let piece = envelope_quantile(u, w, lambda);
    let (g_lo, g_hi) = (piece(1.0), piece(0.0));
    let g = if (g_hi - g_lo).abs() <= 1e-12 * g_lo.abs().max(1.0) {
        QuantileFn::constant(s)
    } else {
        QuantileFn::new(vec![0.0, 1.0], vec![Piece::Custom(piece)])?
    };
    let value = choquet_value_quantile_with(&g, u, w, &opts.quad())?;
    if value.is_infinite() {
        let mut sol = Solution::new(
            Case::ConcaveConcave,
            Value::Infinite,
            StoppingRule {
                kind: RuleKind::HoldForever,
                attainment: Attainment::NotAttaining,
            },
            s,
        );
        sol.diagnostics.lambda = Some(lambda);
        return Ok(sol.note("the Lagrangian candidate has infinite value"));
    }
    let rule = rule_for_quantile(&g, s)?;
    let mut sol = Solution::new(Case::ConcaveConcave, Value::Finite(value), rule, s).with_quantile(g);
    sol.diagnostics.lambda = Some(lambda);
    if let RuleKind::DrawdownFraction { eta } = sol.rule.kind {
        sol.diagnostics.eta = Some(eta);
    }
    Ok(sol.finish(u.offset()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{transform_payoff, PayoffFn, Shape};
    use approx::assert_abs_diff_eq;

    #[test]
    fn pareto_closed_form() {
        let sol = solve_power_power(2.0, 0.5, 0.75, 1.0).unwrap();
        assert_abs_diff_eq!(sol.diagnostics.lambda.unwrap(), 0.75 * 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(sol.value.as_f64(), 3.0 / 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(sol.diagnostics.pareto_index, Some(2.0));
        assert_eq!(sol.rule.kind, RuleKind::DrawdownFraction { eta: 0.5 });
        assert_abs_diff_eq!(sol.g_star.as_ref().unwrap().lower(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn identity_distortion_stops_now() {
        let sol = solve_power_power(2.0, 0.5, 1.0, 3.0).unwrap();
        assert_eq!(sol.rule.kind, RuleKind::StopNow);
        assert_abs_diff_eq!(sol.value.as_f64(), 2.0 * 3f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn infinite_branches() {
        let sol = solve_power_power(2.0, 0.5, 0.3, 1.0).unwrap();
        assert_eq!(sol.value, Value::Infinite);
        let sol = solve_power_power(2.0, 0.5, 0.5, 1.0).unwrap();
        assert_eq!(sol.value, Value::Infinite);
        assert_abs_diff_eq!(sol.diagnostics.rule_value.unwrap(), 2.0 * 10.0, epsilon = 1e-9);
    }

    #[test]
    fn numerical_route_matches_closed_form() {
        let u = transform_payoff(&PayoffFn::Power { gamma: 0.5 }, 1.0).unwrap();
        let w = DistortionFn::Power { alpha: 0.75 };
        let sol = solve_concave_concave(&u, &w, 1.0, &SolverOptions::default()).unwrap();
        assert_abs_diff_eq!(sol.diagnostics.lambda.unwrap(), 0.75 * 2f64.sqrt(), epsilon = 1e-8);
        assert_abs_diff_eq!(sol.value.as_f64(), 3.0 / 2f64.sqrt(), epsilon = 1e-7);
        // the tabulated barycenter is Psi(x) = 2x, i.e. a 50% drawdown rule
        match &sol.rule.kind {
            RuleKind::Barycenter(psi) => {
                for m in [1.0, 2.0, 7.5] {
                    assert_abs_diff_eq!(psi.stop_level(m), 0.5 * m, epsilon = 1e-4 * m);
                }
            }
            other => panic!("expected a barycenter rule, got {other:?}"),
        }
    }

    #[test]
    fn numerical_route_detects_infinite_value() {
        let u = transform_payoff(&PayoffFn::Power { gamma: 0.5 }, 1.0).unwrap();
        let w = DistortionFn::Power { alpha: 0.3 };
        let sol = solve_concave_concave(&u, &w, 1.0, &SolverOptions::default()).unwrap();
        assert_eq!(sol.value, Value::Infinite);
    }

    #[test]
    fn log_payoff_under_power_distortion() {
        // u = ln x: G = lambda^{-1} w'(t) = (alpha / lambda) t^{alpha - 1},
        // budget gives lambda = 1 / s
        let u = TransformedPayoff::custom("ln", |x: f64| x.ln(), |x: f64| 1.0 / x, Shape::Concave, vec![]).unwrap();
        let w = DistortionFn::Power { alpha: 0.5 };
        let sol = solve_concave_concave(&u, &w, 2.0, &SolverOptions::default()).unwrap();
        assert_abs_diff_eq!(sol.diagnostics.lambda.unwrap(), 0.5, epsilon = 1e-8);
        // J = int ln(2 alpha t^{alpha-1}) alpha t^{alpha-1} dt = ln(2 alpha) + (1 - alpha) / alpha
        let expected = (1.0f64).ln() + 1.0;
        assert_abs_diff_eq!(sol.value.as_f64(), expected, epsilon = 1e-7);
    }
}
