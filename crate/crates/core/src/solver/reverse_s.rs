//! Concave payoff with a mixed distortion. Under a reverse-S distortion the
//! optimal quantile is floored at a cut-loss level `a` and follows the
//! marginal envelope above it; under an S-shaped distortion it is capped at
//! a target level `a` instead.

use std::sync::Arc;

use rayon::prelude::*;

use crate::embedding::{rule_for_quantile, Barycenter, PsiRepr, RuleKind, StoppingRule};
use crate::error::{Error, Result};
use crate::model::{DistortionFn, TransformedPayoff};
use crate::numerics::{golden_max, integrate_pieces, lin_space, log_space, root_decreasing_log};
use crate::quantile::{EnvelopeInverse, Piece, QuantileFn};

use super::{Case, Solution, SolverOptions, Value};

/// Value and cut-loss level of the quadratic reverse-S program for
/// `u(x) = c x^r` at the switch probability `c_bar in (1/2, 1]`.
pub fn example52_objective(c: f64, r: f64, s: f64, c_bar: f64) -> (f64, f64) {
    let p = 1.0 / (1.0 - r);
    let k = 2.0 * c_bar - 1.0;
    if k <= 0.0 {
        // the floor vanishes and the tail alone carries the budget
        let m = s * 2.0 * (p + 1.0);
        return (c * m.powf(r) / (p + 1.0), 0.0);
    }
    let a = s / (c_bar + (k.powf(-p) - k) / (2.0 * (p + 1.0)));
    let bracket = 1.0 - 2.0 * c_bar * (1.0 - c_bar) + k.powf(1.0 - p) * (1.0 - k.powf(p + 1.0)) / (p + 1.0);
    (c * a.powf(r) * bracket, a)
}

/// `u(x) = c x^r` with the quadratic reverse-S distortion, reduced to a
/// search over the switch probability `c_bar`.
pub fn solve_example52(c: f64, r: f64, s: f64, opts: &SolverOptions) -> Result<Solution> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidParameter {
            name: "r",
            value: r,
            reason: "payoff exponent must lie in (0, 1)",
        });
    }
    let f = |cb: f64| example52_objective(c, r, s, cb).0;
    let n = 2000;
    let grid: Vec<f64> = (1..=n).map(|i| 0.5 + 0.5 * i as f64 / n as f64).collect();
    let mut k = n - 1;
    for (i, &cb) in grid.iter().enumerate().rev() {
        if f(cb) > f(grid[k]) {
            k = i;
        }
    }
    let lo = if k == 0 { 0.5 + 1e-12 } else { grid[k - 1] };
    let hi = grid[(k + 1).min(n - 1)];
    let (mut c_bar, mut value) = golden_max(f, lo, hi, opts.golden_iters.max(80));
    if f(grid[k]) > value {
        c_bar = grid[k];
        value = f(c_bar);
    }
    if f(1.0) >= value {
        c_bar = 1.0;
        value = f(1.0);
    }
    let (_, a) = example52_objective(c, r, s, c_bar);
    let p = 1.0 / (1.0 - r);
    let kk = 2.0 * c_bar - 1.0;
    let lambda = (4.0 * c_bar - 2.0) * c * r * a.powf(r - 1.0);
    if c_bar >= 1.0 {
        let mut sol = Solution::new(Case::QuadraticReverseS, Value::Finite(c * s.powf(r)), StoppingRule::stop_now(), s)
            .with_quantile(QuantileFn::constant(s));
        sol.diagnostics.c_bar = Some(1.0);
        sol.diagnostics.a = Some(s);
        sol.diagnostics.lambda = Some(lambda);
        return Ok(sol);
    }
    if a <= 0.0 {
        return Err(Error::Infeasible(
            "the optimum sits at c_bar = 1/2, where the floor vanishes".into(),
        ));
    }
    let g = QuantileFn::new(
        vec![0.0, c_bar, 1.0],
        vec![
            Piece::Const(a),
            Piece::Power {
                scale: a * (2.0 / kk).powf(p),
                center: 0.5,
                sign: 1.0,
                exponent: p,
            },
        ],
    )?;
    let psi = Barycenter {
        s,
        lower: a,
        upper: a * kk.powf(-p),
        repr: PsiRepr::AtomPowerTail { a, c_bar, r },
    };
    let mut sol = Solution::new(
        Case::QuadraticReverseS,
        Value::Finite(value),
        StoppingRule::optimal(RuleKind::Barycenter(psi)),
        s,
    )
    .with_quantile(g);
    sol.diagnostics.c_bar = Some(c_bar);
    sol.diagnostics.a = Some(a);
    sol.diagnostics.lambda = Some(lambda);
    sol.diagnostics.iterations = n + opts.golden_iters;
    Ok(sol)
}

/// Shared machinery: `env(lambda / w'(t))` in `t = 1 - x`.
struct Program<'a> {
    u: &'a TransformedPayoff,
    w: &'a DistortionFn,
    env: EnvelopeInverse<'a>,
    s: f64,
    opts: &'a SolverOptions,
}

impl<'a> Program<'a> {
    fn new(u: &'a TransformedPayoff, w: &'a DistortionFn, s: f64, opts: &'a SolverOptions) -> Self {
        Self {
            u,
            w,
            env: EnvelopeInverse::new(u),
            s,
            opts,
        }
    }

    fn g(&self, lambda: f64, t: f64) -> f64 {
        self.env.lower(lambda / self.w.deriv(t))
    }

    /// Largest `t` in `[lo, hi]` with `g(t) > a` (`>=` when `inclusive`), for
    /// `g` nonincreasing in `t`; `lo` when none.
    fn crossing(&self, lambda: f64, a: f64, lo: f64, hi: f64, inclusive: bool) -> f64 {
        let above = |t: f64| {
            let v = self.g(lambda, t);
            if inclusive {
                v >= a
            } else {
                v > a
            }
        };
        if above(hi) {
            return hi;
        }
        if !above(lo) {
            return lo;
        }
        let (mut l, mut h) = (lo, hi);
        for _ in 0..100 {
            let m = 0.5 * (l + h);
            if m <= l || m >= h {
                break;
            }
            if above(m) {
                l = m;
            } else {
                h = m;
            }
        }
        l
    }

    fn breaks(&self) -> Vec<f64> {
        self.w.breakpoints()
    }

    /// Integral over a stretch where `g(lambda, .)` is nonincreasing, split
    /// where `g` leaves 0 or crosses a kink of `u`.
    fn integral_g<F: Fn(f64) -> f64>(&self, f: F, lambda: f64, lo: f64, hi: f64) -> f64 {
        let mut br = self.breaks();
        if self.u.deriv(0.0).is_finite() {
            br.push(self.crossing(lambda, 0.0, lo, hi, false));
        }
        for &k in self.u.kinks() {
            br.push(self.crossing(lambda, k, lo, hi, false));
        }
        integrate_pieces(f, lo, hi, &br, &self.opts.quad()).unwrap_or(f64::INFINITY)
    }

    /// Brackets and solves a nonincreasing budget equation `b(lambda) = s`.
    fn multiplier<B: Fn(f64) -> f64>(&self, budget: B, start: f64) -> Option<f64> {
        let s = self.s;
        let mut hi = if start.is_finite() && start > 0.0 { start } else { 1.0 };
        let mut n = 0;
        while budget(hi) >= s {
            hi *= 10.0;
            n += 1;
            if n > 300 || !hi.is_finite() {
                return None;
            }
        }
        let mut lo = hi;
        let mut n = 0;
        while budget(lo) <= s {
            lo *= 0.01;
            n += 1;
            if n > 150 {
                return None;
            }
        }
        root_decreasing_log(budget, s, lo, hi, self.opts.lambda_rel_tol, self.opts.lambda_iters)
    }

    /// Reverse-S program at floor `a < s`: `(value, lambda, t_c)`.
    fn floor_value(&self, a: f64, q: f64) -> Option<(f64, f64, f64)> {
        let top = 1.0 - q;
        let budget = |lam: f64| {
            let tc = self.crossing(lam, a, 0.0, top, false);
            a * (1.0 - tc) + self.integral_g(|t| self.g(lam, t), lam, 0.0, tc)
        };
        let start = self.u.deriv(a) * self.w.deriv(0.0);
        let lam = self.multiplier(budget, start)?;
        let tc = self.crossing(lam, a, 0.0, top, false);
        let tail = self.integral_g(|t| self.u.eval(self.g(lam, t)) * self.w.deriv(t), lam, 0.0, tc);
        let v = self.u.eval(a) * (1.0 - self.w.eval(tc)) + tail;
        v.is_finite().then_some((v, lam, tc))
    }

    /// S-shaped program at cap `a > s`: `(value, lambda, t_c)`.
    fn cap_value(&self, a: f64, q: f64) -> Option<(f64, f64, f64)> {
        let bottom = 1.0 - q;
        let budget = |lam: f64| {
            let tc = self.crossing(lam, a, bottom, 1.0, true);
            a * tc + self.integral_g(|t| self.g(lam, t), lam, tc, 1.0)
        };
        let lam = self.multiplier(budget, 1.0)?;
        let tc = self.crossing(lam, a, bottom, 1.0, true);
        let head = self.integral_g(|t| self.u.eval(self.g(lam, t)) * self.w.deriv(t), lam, tc, 1.0);
        let v = self.u.eval(a) * self.w.eval(tc) + head;
        v.is_finite().then_some((v, lam, tc))
    }
}

fn envelope_piece(u: &TransformedPayoff, w: &DistortionFn, lambda: f64) -> Piece {
    let u = u.clone();
    let w = w.clone();
    Piece::Custom(Arc::new(move |t: f64| EnvelopeInverse::new(&u).lower(lambda / w.deriv(t))))
}

/// Grid search plus golden refinement of `f` over `grid`; returns
/// `(argmax, value)` with ties resolved toward the last grid point.
fn maximize<F: Fn(f64) -> f64 + Sync>(f: &F, grid: &[f64], log: bool, iters: usize) -> (f64, f64) {
    let vals: Vec<f64> = grid.par_iter().map(|&x| f(x)).collect();
    let mut k = grid.len() - 1;
    for i in (0..grid.len()).rev() {
        if vals[i] > vals[k] + 1e-13 * vals[k].abs().max(1.0) {
            k = i;
        }
    }
    let lo = grid[k.saturating_sub(1)];
    let hi = grid[(k + 1).min(grid.len() - 1)];
    let (x, v) = if log {
        let (lx, v) = golden_max(|t| f(t.exp()), lo.ln(), hi.ln(), iters);
        (lx.exp(), v)
    } else {
        golden_max(f, lo, hi, iters)
    };
    if v > vals[k] {
        (x, v)
    } else {
        (grid[k], vals[k])
    }
}

fn stop_now(case: Case, u: &TransformedPayoff, s: f64) -> Solution {
    let mut sol = Solution::new(case, Value::Finite(u.eval(s)), StoppingRule::stop_now(), s)
        .with_quantile(QuantileFn::constant(s));
    sol.diagnostics.a = Some(s);
    sol
}

/// Concave `u`, reverse-S `w`: outer search over the floor `a`, inner
/// multiplier from the budget equation.
pub fn solve_concave_reverse_s(
    u: &TransformedPayoff,
    w: &DistortionFn,
    s: f64,
    opts: &SolverOptions,
) -> Result<Solution> {
    let q = w
        .q()
        .ok_or_else(|| Error::InvalidInput("reverse-S solver needs a distortion with an inflection".into()))?;
    let prog = Program::new(u, w, s, opts);
    let us = u.eval(s);
    let f = |a: f64| {
        if a >= s {
            us
        } else {
            prog.floor_value(a, q).map_or(f64::NEG_INFINITY, |x| x.0)
        }
    };
    let grid = log_space(s * 1e-4, s, opts.a_grid.max(8));
    let (a, v) = maximize(&f, &grid, true, opts.golden_iters);
    if a >= s || v <= us + 1e-12 * us.abs().max(1.0) {
        return Ok(stop_now(Case::ConcaveReverseS, u, s).finish(u.offset()));
    }
    let (v, lambda, tc) = prog
        .floor_value(a, q)
        .ok_or_else(|| Error::NonConvergence { best: v })?;
    let x_c = 1.0 - tc;
    let g = QuantileFn::new(vec![0.0, x_c, 1.0], vec![Piece::Const(a), envelope_piece(u, w, lambda)])?;
    let rule = rule_for_quantile(&g, s)?;
    let mut sol = Solution::new(Case::ConcaveReverseS, Value::Finite(v), rule, s).with_quantile(g);
    sol.diagnostics.a = Some(a);
    sol.diagnostics.lambda = Some(lambda);
    sol.diagnostics.c_bar = Some(x_c);
    sol.diagnostics.iterations = grid.len() + opts.golden_iters;
    if a <= grid[1] {
        sol = sol.note("no cut-loss floor: the optimal floor tends to 0");
    }
    Ok(sol.finish(u.offset()))
}

/// Concave `u`, S-shaped `w`: outer search over the cap `a in [s, s / (1 - q)]`.
pub fn solve_concave_s(
    u: &TransformedPayoff,
    w: &DistortionFn,
    s: f64,
    opts: &SolverOptions,
) -> Result<Solution> {
    let q = w
        .q()
        .ok_or_else(|| Error::InvalidInput("S-shaped solver needs a distortion with an inflection".into()))?;
    let prog = Program::new(u, w, s, opts);
    let us = u.eval(s);
    let a_max = s / (1.0 - q);
    let f = |a: f64| {
        if a <= s {
            us
        } else {
            prog.cap_value(a.min(a_max * (1.0 - 1e-12)), q)
                .map_or(f64::NEG_INFINITY, |x| x.0)
        }
    };
    let mut grid = lin_space(s, a_max, opts.a_grid.max(8));
    // prefer the smallest cap among ties
    grid.reverse();
    let (a, v) = maximize(&f, &grid, false, opts.golden_iters);
    if a <= s || v <= us + 1e-12 * us.abs().max(1.0) {
        return Ok(stop_now(Case::ConcaveS, u, s).finish(u.offset()));
    }
    let a = a.min(a_max * (1.0 - 1e-12));
    let (v, lambda, tc) = prog.cap_value(a, q).ok_or(Error::NonConvergence { best: v })?;
    let x_c = 1.0 - tc;
    let g = if x_c <= 0.0 {
        QuantileFn::constant(a)
    } else {
        QuantileFn::new(vec![0.0, x_c, 1.0], vec![envelope_piece(u, w, lambda), Piece::Const(a)])?
    };
    let rule = rule_for_quantile(&g, s)?;
    let mut sol = Solution::new(Case::ConcaveS, Value::Finite(v), rule, s).with_quantile(g);
    sol.diagnostics.a = Some(a);
    sol.diagnostics.lambda = Some(lambda);
    sol.diagnostics.c_bar = Some(x_c);
    sol.diagnostics.iterations = grid.len() + opts.golden_iters;
    Ok(sol.finish(u.offset()))
}
