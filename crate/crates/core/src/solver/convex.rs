//! Interval-exit regimes: convex distortion with any nondecreasing payoff,
//! and convex transformed payoff with any distortion. Both reduce to a
//! search over two thresholds `a <= s <= b`.

use rayon::prelude::*;

use crate::embedding::{exit_rule, Attainment, RuleKind, StoppingRule};
use crate::error::{Error, Result};
use crate::model::{DistortionFn, TransformedPayoff};
use crate::numerics::{golden_max, log_space};
use crate::quantile::QuantileFn;

use super::{Case, Solution, SolverOptions, Value};

/// `(1 - w(p)) u(a) + w(p) u(b)` with `p = (s - a) / (b - a)`, the value of
/// exiting `(a, b)` from `s`.
pub fn two_threshold_objective(u: &TransformedPayoff, w: &DistortionFn, s: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return u.eval(s);
    }
    let p = ((s - a) / (b - a)).clamp(0.0, 1.0);
    let wp = w.eval(p);
    let lo = if wp == 1.0 { 0.0 } else { (1.0 - wp) * u.eval(a) };
    lo + wp * u.eval(b)
}

#[derive(Debug, Clone, Copy)]
struct Cand {
    v: f64,
    a: f64,
    b: f64,
}

fn clean(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

fn tie_tol(v: f64) -> f64 {
    1e-12 * v.abs().max(1.0)
}

/// Strictly better, or tied with a narrower interval.
fn better(c: &Cand, best: &Cand) -> bool {
    let tol = tie_tol(best.v);
    c.v > best.v + tol || (c.v >= best.v - tol && c.b - c.a < best.b - best.a)
}

/// Log grid over `a in [a_min, s]`, `b in [s, b_max]`; rows run in
/// parallel and are reduced in index order.
fn search_grid<F>(obj: &F, s: f64, a_min: f64, b_max: f64, n: usize, start: Cand) -> Cand
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    let a_grid = log_space(a_min, s, n);
    let b_grid = log_space(s, b_max, n);
    let rows: Vec<Cand> = a_grid
        .par_iter()
        .map(|&a| {
            let mut best = Cand {
                v: f64::NEG_INFINITY,
                a,
                b: s,
            };
            for &b in &b_grid {
                let c = Cand { v: obj(a, b), a, b };
                if better(&c, &best) {
                    best = c;
                }
            }
            best
        })
        .collect();
    rows.into_iter()
        .fold(start, |best, c| if better(&c, &best) { c } else { best })
}

/// Coordinate golden-section passes in `(ln a, ln b)`.
fn refine<F>(obj: &F, start: Cand, s: f64, a_min: f64, b_max: f64, iters: usize) -> Cand
where
    F: Fn(f64, f64) -> f64,
{
    let mut best = start;
    if best.a >= s && best.b <= s {
        // the stop-now point is a corner of the domain; refine from a
        // nearby interior point instead
        best = Cand {
            v: best.v,
            a: s * 0.999,
            b: s * 1.001,
        };
    }
    let mut cur = best;
    let mut span = 0.1_f64.max(((b_max / a_min).ln()) / 50.0);
    for _ in 0..6 {
        let (la, lb) = (cur.a.ln(), cur.b.ln());
        let (x, va) = golden_max(
            |t| obj(t.exp(), cur.b),
            (la - span).max(a_min.ln()),
            (la + span).min(s.ln()),
            iters,
        );
        if va >= cur.v {
            cur = Cand {
                v: va,
                a: x.exp().min(s),
                b: cur.b,
            };
        }
        let (y, vb) = golden_max(
            |t| obj(cur.a, t.exp()),
            (lb - span).max(s.ln()),
            (lb + span).min(b_max.ln()),
            iters,
        );
        if vb >= cur.v {
            cur = Cand {
                v: vb,
                a: cur.a,
                b: y.exp().max(s),
            };
        }
        span *= 0.5;
    }
    if better(&cur, &start) {
        cur
    } else {
        start
    }
}

fn stop_now_solution(case: Case, u: &TransformedPayoff, s: f64) -> Solution {
    Solution::new(case, Value::Finite(u.eval(s)), StoppingRule::stop_now(), s)
        .with_quantile(QuantileFn::constant(s))
}

fn exit_solution(case: Case, v: f64, a: f64, b: f64, s: f64) -> Result<Solution> {
    let (rule, law) = exit_rule(a, b, s)?;
    let g = if a == b {
        QuantileFn::constant(s)
    } else {
        QuantileFn::steps(vec![0.0, law.p_a, 1.0], &[a, b])?
    };
    let mut sol = Solution::new(case, Value::Finite(v), rule, s).with_quantile(g);
    sol.diagnostics.a = Some(a);
    sol.diagnostics.b = Some(b);
    sol.diagnostics.c = Some(law.p_a);
    Ok(sol)
}

/// Convex `w`: maximize the interval-exit value over `0 < a <= s <= b`.
pub fn solve_two_threshold(
    u: &TransformedPayoff,
    w: &DistortionFn,
    s: f64,
    opts: &SolverOptions,
) -> Result<Solution> {
    let obj = |a: f64, b: f64| clean(two_threshold_objective(u, w, s, a, b));
    let us = u.eval(s);
    if !us.is_finite() {
        return Err(Error::InvalidInput(format!("u(s) = {us} is not finite")));
    }
    let stop = Cand { v: us, a: s, b: s };
    let n = opts.grid_points.max(8);
    let a_min = s * 1e-4;
    let b_top = s * opts.b_cap_max.max(1.0);
    let mut cap = (s * 1e4).min(b_top);
    let mut best = refine(&obj, search_grid(&obj, s, a_min, cap, n, stop), s, a_min, cap, opts.golden_iters);
    let mut iterations = n * n;
    let near_cap = |b: f64, cap: f64| b > cap / 1.05;
    let mut climbing = false;
    while near_cap(best.b, cap) && cap < b_top {
        let next = (cap * 10.0).min(b_top);
        let cand = refine(&obj, search_grid(&obj, s, a_min, next, n, best), s, a_min, next, opts.golden_iters);
        iterations += n * n;
        climbing = cand.v > best.v + tie_tol(best.v);
        best = cand;
        cap = next;
    }
    if best.v.is_nan() || best.v == f64::NEG_INFINITY {
        return Err(Error::NonConvergence { best: best.v });
    }

    // a -> 0: the rule never stops below s, which is not a finite stopping time
    if u.eval(0.0).is_finite() {
        let grid = log_space(s, cap, 4 * n);
        let (mut bb, mut bv) = (s, obj(0.0, s));
        for &b in &grid {
            let v = obj(0.0, b);
            if v > bv {
                bv = v;
                bb = b;
            }
        }
        let (lb, v) = golden_max(|t| obj(0.0, t.exp()), (bb / 1.2).max(s).ln(), (bb * 1.2).min(cap).ln(), opts.golden_iters);
        if v > bv {
            bv = v;
            bb = lb.exp();
        }
        if bv > best.v + 1e-9 * best.v.abs().max(1.0) {
            let mut sol = Solution::new(
                Case::TwoThreshold,
                Value::Supremum(bv),
                StoppingRule {
                    kind: RuleKind::ExitInterval { a: 0.0, b: bb },
                    attainment: Attainment::NotFinite,
                },
                s,
            );
            sol.diagnostics.a = Some(0.0);
            sol.diagnostics.b = Some(bb);
            sol.diagnostics.iterations = iterations;
            return Ok(sol
                .note("the supremum needs a = 0: only an upper threshold is set and the rule may never stop")
                .finish(u.offset()));
        }
    }

    if near_cap(best.b, cap) && climbing {
        let limit = limit_b_to_inf(&obj, s, a_min, cap, opts.golden_iters).max(best.v);
        let mut sol = Solution::new(
            Case::TwoThreshold,
            Value::Supremum(limit),
            StoppingRule {
                kind: RuleKind::ExitInterval { a: best.a, b: best.b },
                attainment: Attainment::NotAttaining,
            },
            s,
        );
        sol.diagnostics.a = Some(best.a);
        sol.diagnostics.b = Some(best.b);
        sol.diagnostics.rule_value = Some(best.v);
        sol.diagnostics.iterations = iterations;
        sol.diagnostics.sequence = Some("exit (a*, b_n) with b_n -> inf".into());
        return Ok(sol.note("supremum approached as b -> inf").finish(u.offset()));
    }

    let sol = if best.v <= us + 1e-10 * us.abs().max(1.0) {
        stop_now_solution(Case::TwoThreshold, u, s)
    } else {
        exit_solution(Case::TwoThreshold, best.v, best.a, best.b, s)?
    };
    let mut sol = sol;
    sol.diagnostics.iterations = iterations;
    Ok(sol.finish(u.offset()))
}

/// Best value over `a` at thresholds `b` far beyond the cap.
fn limit_b_to_inf<F>(obj: &F, s: f64, a_min: f64, cap: f64, iters: usize) -> f64
where
    F: Fn(f64, f64) -> f64,
{
    let mut last = f64::NEG_INFINITY;
    let mut b = cap;
    for _ in 0..30 {
        b *= 100.0;
        if !b.is_finite() {
            break;
        }
        let (_, v) = golden_max(|t| obj(t.exp(), b), a_min.ln(), s.ln(), iters);
        if v.is_finite() && (v - last).abs() <= 1e-12 * v.abs().max(1.0) {
            return v;
        }
        last = last.max(v);
    }
    last
}

/// Convex `u`: the value is `sup_{x in (0, 1]} w(x) u(s / x)`.
pub fn solve_convex_u(
    u: &TransformedPayoff,
    w: &DistortionFn,
    s: f64,
    opts: &SolverOptions,
) -> Result<Solution> {
    let h = |x: f64| clean(w.eval(x) * u.eval(s / x));
    let us = u.eval(s);
    let x_min = 1e-12;

    // behaviour as x -> 0
    let (h1, h2, h3) = (h(1e-12), h(1e-14), h(1e-16));
    let (d1, d2) = (h2 - h1, h3 - h2);
    if !h3.is_finite() || (d2 > 1e-12 * h3.abs().max(1.0) && d2 > 0.5 * d1) {
        let mut sol = Solution::new(
            Case::ConvexPayoff,
            Value::Infinite,
            StoppingRule {
                kind: RuleKind::ExitInterval { a: 0.0, b: s / x_min },
                attainment: Attainment::NotFinite,
            },
            s,
        );
        sol.diagnostics.sequence = Some("exit (0, b_n) with b_n -> inf".into());
        return Ok(sol.note("w(x) u(s / x) diverges as x -> 0").finish(u.offset()));
    }
    let limit = if d2 > 0.0 && d1 > 0.0 {
        let rho = d2 / d1;
        h3 + d2 * rho / (1.0 - rho)
    } else {
        h3.max(h2).max(h1)
    };

    let n = 4 * opts.grid_points.max(8);
    let grid = log_space(x_min, 1.0, n);
    let vals: Vec<f64> = grid.par_iter().map(|&x| h(x)).collect();
    let mut k = 0;
    for (i, &v) in vals.iter().enumerate() {
        if v > vals[k] + tie_tol(vals[k]) || (v >= vals[k] - tie_tol(vals[k]) && i == n - 1) {
            k = i;
        }
    }
    let lo = grid[k.saturating_sub(1)];
    let hi = grid[(k + 1).min(n - 1)];
    let (lx, gv) = golden_max(|t| h(t.exp()), lo.ln(), hi.ln(), opts.golden_iters);
    let (mut x_star, mut v) = (grid[k], vals[k]);
    if gv > v {
        x_star = lx.exp();
        v = gv;
    }

    if k == 0 || limit > v + tie_tol(v) {
        let sup = limit.max(v);
        let b = s / x_min;
        let mut sol = Solution::new(
            Case::ConvexPayoff,
            Value::Supremum(sup),
            StoppingRule {
                kind: RuleKind::ExitInterval { a: 0.0, b },
                attainment: Attainment::NotFinite,
            },
            s,
        );
        sol.diagnostics.x_star = Some(0.0);
        sol.diagnostics.b = Some(b);
        sol.diagnostics.rule_value = Some(h(x_min));
        sol.diagnostics.sequence = Some("exit (0, b_n) with b_n -> inf".into());
        return Ok(sol.note("b* -> inf: the supremum is approached only as the upper threshold grows without bound").finish(u.offset()));
    }

    if v <= us + 1e-10 * us.abs().max(1.0) {
        let mut sol = stop_now_solution(Case::ConvexPayoff, u, s);
        sol.diagnostics.x_star = Some(1.0);
        return Ok(sol.finish(u.offset()));
    }

    // interior x*: attained only if a two-threshold rule with a > 0 reaches v
    let obj = |a: f64, b: f64| clean(two_threshold_objective(u, w, s, a, b));
    let b_max = (s * 1e4).max(10.0 * s / x_star);
    let a_min = s * 1e-4;
    let m = opts.grid_points.max(8);
    let stop = Cand { v: us, a: s, b: s };
    let best = refine(&obj, search_grid(&obj, s, a_min, b_max, m, stop), s, a_min, b_max, opts.golden_iters);
    let mut sol = if best.v >= v - 1e-9 * v.abs().max(1.0) && best.a < s {
        exit_solution(Case::ConvexPayoff, best.v.max(v), best.a, best.b, s)?
    } else {
        let b = s / x_star;
        let mut sol = Solution::new(
            Case::ConvexPayoff,
            Value::Supremum(v),
            StoppingRule {
                kind: RuleKind::ExitInterval { a: 0.0, b },
                attainment: Attainment::NotFinite,
            },
            s,
        );
        sol.diagnostics.b = Some(b);
        sol.diagnostics.a = Some(0.0);
        sol.note("only a stop-gain threshold is set; the rule stops with probability w^-1 below one")
    };
    sol.diagnostics.x_star = Some(x_star);
    sol.diagnostics.iterations = n + m * m;
    Ok(sol.finish(u.offset()))
}
