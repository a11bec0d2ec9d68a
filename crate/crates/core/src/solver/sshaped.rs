//! S-shaped payoff with a reverse-S (or concave) distortion.
//!
//! On the convex part of `w` the quantile is a step function with levels
//! `a1 <= a2 <= a3`; on the concave part it is at least `a3` and maximizes
//! the pointwise Lagrangian `u(z) w'(t) - lambda z` over `{a3} U [theta, inf)`.
//! The outer search runs over `(a3, lambda)`, the head over `(c1, c2, a1/a2)`
//! with `a2` fixed by the budget.

use std::sync::Arc;

use crate::embedding::{rule_for_quantile, StoppingRule};
use crate::error::{Error, Result};
use crate::model::{DistortionFn, DistortionShape, Shape, TransformedPayoff};
use crate::numerics::{golden_max, integrate_pieces, lin_space, log_space, root_decreasing_log};
use crate::quantile::{EnvelopeInverse, Piece, QuantileFn};

use super::{Case, Solution, SolverOptions, Value};

const LAMBDA_GRID: usize = 40;
const RHO_GRID: [f64; 12] = [1e-6, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.85, 1.0];

#[derive(Debug, Clone, Copy)]
struct Tail {
    t_star: f64,
    budget: f64,
    value: f64,
}

#[derive(Debug, Clone, Copy)]
struct Head {
    value: f64,
    c1: f64,
    c2: f64,
    a1: f64,
    a2: f64,
}

#[derive(Debug, Clone, Copy)]
struct Cand {
    value: f64,
    a3: f64,
    lambda: f64,
    tail: Tail,
    head: Head,
}

struct Program<'a> {
    u: &'a TransformedPayoff,
    w: &'a DistortionFn,
    env: EnvelopeInverse<'a>,
    theta: f64,
    q: f64,
    s: f64,
    w_top: f64,
    c_grid: Vec<f64>,
    w_grid: Vec<f64>,
    opts: &'a SolverOptions,
}

impl<'a> Program<'a> {
    fn y(&self, a3: f64, lambda: f64, t: f64) -> f64 {
        self.env.lower(lambda / self.w.deriv(t)).max(a3)
    }

    /// Gain of the interior candidate over the floor `a3` at `t`.
    fn gain(&self, a3: f64, lambda: f64, t: f64) -> f64 {
        let y = self.y(a3, lambda, t);
        if y <= a3 {
            return 0.0;
        }
        (self.u.eval(y) - self.u.eval(a3)) * self.w.deriv(t) - lambda * (y - a3)
    }

    fn integral<F: Fn(f64) -> f64>(&self, f: F, lo: f64, hi: f64, extra: f64) -> f64 {
        let mut br = self.w.breakpoints();
        br.push(extra);
        integrate_pieces(f, lo, hi, &br, &self.opts.quad()).unwrap_or(f64::INFINITY)
    }

    /// Largest `t` in `[0, hi]` with `pred(t)`, for a predicate that holds
    /// on an initial segment.
    fn last_true<P: Fn(f64) -> bool>(pred: P, hi: f64) -> f64 {
        if pred(hi) {
            return hi;
        }
        let (mut l, mut h) = (0.0, hi);
        for _ in 0..80 {
            let m = 0.5 * (l + h);
            if pred(m) {
                l = m;
            } else {
                h = m;
            }
        }
        l
    }

    fn tail(&self, a3: f64, lambda: f64) -> Tail {
        let top = 1.0 - self.q;
        if top <= 0.0 {
            return Tail {
                t_star: 0.0,
                budget: 0.0,
                value: 0.0,
            };
        }
        let t_star = Self::last_true(|t| self.gain(a3, lambda, t) > 0.0, top);
        // where the interior candidate leaves its lower clamp
        let floor = a3.max(self.theta);
        let kink = Self::last_true(|t| self.env.lower(lambda / self.w.deriv(t)) > floor, t_star);
        let ua = self.u.eval(a3);
        let budget = a3 * (top - t_star) + self.integral(|t| self.y(a3, lambda, t), 0.0, t_star, kink);
        let value = ua * (self.w_top - self.w.eval(t_star))
            + self.integral(|t| self.u.eval(self.y(a3, lambda, t)) * self.w.deriv(t), 0.0, t_star, kink);
        Tail {
            t_star,
            budget,
            value,
        }
    }

    fn head_value(&self, a3: f64, c1: f64, c2: f64, a1: f64, a2: f64) -> f64 {
        let w1 = self.w.eval(1.0 - c1);
        let w2 = self.w.eval(1.0 - c2);
        self.u.eval(a1) * (1.0 - w1) + self.u.eval(a2) * (w1 - w2) + self.u.eval(a3) * (w2 - self.w_top)
    }

    /// Levels `(a1, a2)` from the head budget `h`, or `None` if infeasible.
    fn levels(&self, a3: f64, h: f64, c1: f64, c2: f64, rho: f64) -> Option<(f64, f64)> {
        let rem = h - a3 * (self.q - c2);
        let den = rho * c1 + (c2 - c1);
        if !(rem > 0.0 && den > 0.0) {
            return None;
        }
        let a2 = rem / den;
        if a2 > a3 * (1.0 + 1e-12) {
            return None;
        }
        Some((rho * a2, a2.min(a3)))
    }

    /// Best three-level head with budget `h` and cap `a3`.
    fn head(&self, a3: f64, h: f64) -> Option<Head> {
        let q = self.q;
        let full = a3 * q;
        if q <= 0.0 || h >= full * (1.0 - 1e-12) {
            if h > full * (1.0 + 1e-9) + 1e-12 * self.s {
                return None;
            }
            return Some(Head {
                value: self.u.eval(a3) * (1.0 - self.w_top),
                c1: 0.0,
                c2: 0.0,
                a1: a3,
                a2: a3,
            });
        }
        let ua3 = self.u.eval(a3);
        let cg = &self.c_grid;
        let wg = &self.w_grid;
        let mut best: Option<Head> = None;
        let mut consider = |v: f64, c1: f64, c2: f64, a1: f64, a2: f64| {
            if best.map_or(true, |b| v > b.value) {
                best = Some(Head { value: v, c1, c2, a1, a2 });
            }
        };
        for j in 1..cg.len() {
            let c2 = cg[j];
            let rem = h - a3 * (q - c2);
            if rem <= 0.0 {
                continue;
            }
            let tail = ua3 * (wg[j] - self.w_top);
            let a2 = rem / c2;
            if a2 <= a3 * (1.0 + 1e-12) {
                consider(self.u.eval(a2) * (1.0 - wg[j]) + tail, 0.0, c2, a2, a2.min(a3));
            }
            for i in 1..j {
                let c1 = cg[i];
                for &rho in &RHO_GRID {
                    if let Some((a1, a2)) = self.levels(a3, h, c1, c2, rho) {
                        let v = self.u.eval(a1) * (1.0 - wg[i]) + self.u.eval(a2) * (wg[i] - wg[j]) + tail;
                        consider(v, c1, c2, a1, a2);
                    }
                }
            }
        }
        best
    }

    /// Continuous refinement of a head found on the grid.
    fn refine_head(&self, a3: f64, h: f64, start: Head) -> Head {
        if self.q <= 0.0 || start.c2 <= 0.0 {
            return start;
        }
        let eval = |c1: f64, c2: f64, rho: f64| -> Option<Head> {
            let (a1, a2) = self.levels(a3, h, c1, c2, rho)?;
            Some(Head {
                value: self.head_value(a3, c1, c2, a1, a2),
                c1,
                c2,
                a1,
                a2,
            })
        };
        let score = |c1: f64, c2: f64, rho: f64| eval(c1, c2, rho).map_or(f64::NEG_INFINITY, |x| x.value);
        let mut cur = start;
        let mut rho = if start.a2 > 0.0 { start.a1 / start.a2 } else { 1.0 };
        let iters = self.opts.golden_iters;
        for _ in 0..3 {
            let (c2, _) = golden_max(|c| score(cur.c1.min(c), c, rho), cur.c1, self.q, iters);
            if let Some(hd) = eval(cur.c1, c2, rho) {
                if hd.value >= cur.value {
                    cur = hd;
                }
            }
            let (c1, _) = golden_max(|c| score(c, cur.c2, rho), 0.0, cur.c2, iters);
            if let Some(hd) = eval(c1, cur.c2, rho) {
                if hd.value >= cur.value {
                    cur = hd;
                }
            }
            let (r, _) = golden_max(|r| score(cur.c1, cur.c2, r), 1e-9, 1.0, iters);
            if let Some(hd) = eval(cur.c1, cur.c2, r) {
                if hd.value >= cur.value {
                    cur = hd;
                    rho = r;
                }
            }
        }
        cur
    }

    /// Multiplier range keeping the head budget in `[0, a3 q]`.
    fn lambda_range(&self, a3: f64) -> Option<(f64, f64)> {
        let top = 1.0 - self.q;
        if top <= 0.0 {
            return Some((1.0, 1.0));
        }
        let s = self.s;
        if a3 * top > s {
            return None;
        }
        let budget = |l: f64| self.tail(a3, l).budget;
        let floor = a3 * top;
        let target_hi = (s - a3 * self.q).max(floor * (1.0 + 1e-9));
        let mut lo = 1.0;
        let mut n = 0;
        while budget(lo) <= s {
            lo *= 0.1;
            n += 1;
            if n > 200 {
                return None;
            }
        }
        let mut hi = 1.0_f64.max(lo);
        let mut n = 0;
        while budget(hi) >= target_hi {
            hi *= 10.0;
            n += 1;
            if n > 200 || !hi.is_finite() {
                return None;
            }
        }
        let tol = self.opts.lambda_rel_tol;
        let it = self.opts.lambda_iters;
        let l_min = root_decreasing_log(budget, s, lo, hi, tol, it)?;
        let l_max = if target_hi >= s {
            l_min
        } else {
            root_decreasing_log(budget, target_hi, l_min, hi, tol, it).unwrap_or(hi)
        };
        Some((l_min, l_max.max(l_min)))
    }

    fn candidate(&self, a3: f64, lambda: f64) -> Option<Cand> {
        let tail = self.tail(a3, lambda);
        if !tail.value.is_finite() {
            return None;
        }
        let h = (self.s - tail.budget).max(0.0);
        let head = self.head(a3, h)?;
        Some(Cand {
            value: tail.value + head.value,
            a3,
            lambda,
            tail,
            head,
        })
    }

    fn best_at(&self, a3: f64, n: usize) -> Option<Cand> {
        let (l0, l1) = self.lambda_range(a3)?;
        let lambdas = if l1 <= l0 * (1.0 + 1e-12) {
            vec![l0]
        } else {
            log_space(l0, l1, n)
        };
        lambdas
            .into_iter()
            .filter_map(|l| self.candidate(a3, l))
            .fold(None, |b: Option<Cand>, c| match b {
                Some(b) if b.value >= c.value => Some(b),
                _ => Some(c),
            })
    }

    /// Candidate at `(a3, tau)` with `lambda` interpolated log-linearly in
    /// its admissible range.
    fn at_tau(&self, a3: f64, tau: f64) -> Option<Cand> {
        let (l0, l1) = self.lambda_range(a3)?;
        let l = l0 * (l1 / l0).powf(tau.clamp(0.0, 1.0));
        self.candidate(a3, l)
    }
}

/// S-shaped `u` with a reverse-S, concave or convex `w`. Concave `u` is
/// accepted as the `theta = 0` case.
pub fn solve_sshaped_reverse_s(
    u: &TransformedPayoff,
    w: &DistortionFn,
    s: f64,
    opts: &SolverOptions,
) -> Result<Solution> {
    let theta = match u.shape() {
        Shape::SShaped { theta } => theta,
        Shape::Concave => 0.0,
        other => {
            return Err(Error::UnsupportedRegime {
                payoff: other.to_string(),
                distortion: w.shape().to_string(),
                reason: "the mixed-shape program needs an S-shaped or concave payoff",
            })
        }
    };
    let q = match w.shape() {
        DistortionShape::ReverseS { q } => q,
        DistortionShape::Concave => 0.0,
        DistortionShape::Convex | DistortionShape::Identity => 1.0,
        DistortionShape::SShaped { .. } => {
            return Err(Error::UnsupportedRegime {
                payoff: u.shape().to_string(),
                distortion: w.shape().to_string(),
                reason: "S-shaped payoff with S-shaped distortion has no solver",
            })
        }
    };
    let n_c = opts.c_grid.max(3);
    let c_grid = lin_space(0.0, q.max(1e-300), n_c);
    let w_grid = c_grid.iter().map(|c| w.eval(1.0 - c)).collect();
    let prog = Program {
        u,
        w,
        env: EnvelopeInverse::from(u, theta),
        theta,
        q,
        s,
        w_top: w.eval(1.0 - q),
        c_grid,
        w_grid,
        opts,
    };

    let a_lo = s * 1e-3;
    let a_hi = if q < 1.0 {
        (s / (1.0 - q)).min(theta.max(s) * 1e2)
    } else {
        theta.max(s) * 1e2
    };
    let a_grid = log_space(a_lo, a_hi, opts.a_grid.max(4));
    let cells: Vec<Option<Cand>> = a_grid.iter().map(|&a3| prog.best_at(a3, LAMBDA_GRID)).collect();
    let mut best: Option<(usize, Cand)> = None;
    for (i, c) in cells.iter().enumerate() {
        if let Some(c) = c {
            if best.map_or(true, |(_, b)| c.value > b.value) {
                best = Some((i, *c));
            }
        }
    }
    let us = u.eval(s);
    let Some((k, mut cur)) = best else {
        return Err(Error::Infeasible("no feasible point in the (a3, lambda) search".into()));
    };

    // coordinate refinement in (ln a3, tau)
    let lo = a_grid[k.saturating_sub(1)].ln();
    let hi = a_grid[(k + 1).min(a_grid.len() - 1)].ln();
    let tau_of = |c: &Cand| {
        prog.lambda_range(c.a3).map_or(0.0, |(l0, l1)| {
            if l1 > l0 {
                (c.lambda / l0).ln() / (l1 / l0).ln()
            } else {
                0.0
            }
        })
    };
    let iters = (opts.golden_iters / 2).max(20);
    let mut tau = tau_of(&cur);
    for _ in 0..2 {
        let score = |la: f64| prog.at_tau(la.exp(), tau).map_or(f64::NEG_INFINITY, |c| c.value);
        let (la, _) = golden_max(score, lo, hi, iters);
        if let Some(c) = prog.at_tau(la.exp(), tau) {
            if c.value > cur.value {
                cur = c;
            }
        }
        let a3 = cur.a3;
        let (t, _) = golden_max(
            |t| prog.at_tau(a3, t).map_or(f64::NEG_INFINITY, |c| c.value),
            0.0,
            1.0,
            iters,
        );
        if let Some(c) = prog.at_tau(a3, t) {
            if c.value > cur.value {
                cur = c;
                tau = t;
            }
        }
    }
    let h = (s - cur.tail.budget).max(0.0);
    cur.head = prog.refine_head(cur.a3, h, cur.head);
    cur.value = cur.tail.value + cur.head.value;

    if cur.value <= us + 1e-12 * us.abs().max(1.0) {
        let sol = Solution::new(Case::SShapedReverseS, Value::Finite(us), StoppingRule::stop_now(), s)
            .with_quantile(QuantileFn::constant(s));
        return Ok(sol.finish(u.offset()));
    }

    let g = build_quantile(u, w, theta, q, &cur)?;
    let rule = rule_for_quantile(&g, s)?;
    let mut sol = Solution::new(Case::SShapedReverseS, Value::Finite(cur.value), rule, s).with_quantile(g);
    let d = &mut sol.diagnostics;
    d.lambda = Some(cur.lambda);
    d.a = Some(cur.head.a1);
    d.b = Some(cur.a3);
    d.c = Some(cur.head.c1);
    d.c_bar = Some(cur.head.c2);
    d.iterations = a_grid.len() * LAMBDA_GRID;
    sol = sol.note(format!(
        "levels a1 = {}, a2 = {}, a3 = {}; probabilities c1 = {}, c2 = {}, q = {q}; tail switch t* = {}",
        cur.head.a1, cur.head.a2, cur.a3, cur.head.c1, cur.head.c2, cur.tail.t_star
    ));
    if cur.a3 > theta && theta > 0.0 {
        sol = sol.note("a3 lies above the inflection theta");
    }
    Ok(sol.finish(u.offset()))
}

fn build_quantile(u: &TransformedPayoff, w: &DistortionFn, theta: f64, q: f64, c: &Cand) -> Result<QuantileFn> {
    let mut breaks = vec![0.0];
    let mut pieces = Vec::new();
    let mut push = |end: f64, piece: Piece| {
        if end > *breaks.last().unwrap() {
            breaks.push(end);
            pieces.push(piece);
        }
    };
    let Head { c1, c2, a1, a2, .. } = c.head;
    push(c1, Piece::Const(a1));
    push(c2, Piece::Const(a2));
    push(q, Piece::Const(c.a3));
    push(1.0 - c.tail.t_star, Piece::Const(c.a3));
    if c.tail.t_star > 0.0 {
        let (u, w) = (u.clone(), w.clone());
        let (a3, lambda) = (c.a3, c.lambda);
        let f = Arc::new(move |t: f64| EnvelopeInverse::from(&u, theta).lower(lambda / w.deriv(t)).max(a3));
        push(1.0, Piece::Custom(f));
    }
    if *breaks.last().unwrap() < 1.0 {
        *breaks.last_mut().unwrap() = 1.0;
    }
    Ok(QuantileFn::new(breaks, pieces)?.normalized())
}
