//! Quantile functions and distribution functions of the stopped state, the
//! two forms of the Choquet value, the budget functional and the inverses
//! of the marginal payoff used by the Lagrangian solvers.
//!
//! Both [`QuantileFn`] and [`Cdf`] are ordered lists of pieces. Smooth
//! quantile pieces are either power laws in the distance to a center or
//! arbitrary monotone closures parametrized by `t = 1 - x`; the latter keeps
//! full precision where quantiles blow up as `x -> 1`.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{DistortionFn, TransformedPayoff};
use crate::numerics::{integrate, integrate_pieces, integrate_pieces_to_inf, QuadOptions};

type TFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One smooth or constant piece of a quantile function.
#[derive(Clone)]
pub enum Piece {
    Const(f64),
    /// `scale * (sign * (x - center))^exponent`
    Power {
        scale: f64,
        center: f64,
        sign: f64,
        exponent: f64,
    },
    /// `G` as a nondecreasing function of `x`, given in terms of `t = 1 - x`.
    Custom(TFn),
}

impl fmt::Debug for Piece {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Piece::Const(v) => write!(f, "Const({v})"),
            Piece::Power {
                scale,
                center,
                sign,
                exponent,
            } => write!(f, "Power({scale} * ({sign} * (x - {center}))^{exponent})"),
            Piece::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Piece {
    /// Value at `x = 1 - t`.
    pub fn eval_t(&self, t: f64) -> f64 {
        match self {
            Piece::Const(v) => *v,
            Piece::Power {
                scale,
                center,
                sign,
                exponent,
            } => {
                let base = sign * ((1.0 - center) - t);
                if base <= 0.0 {
                    if *exponent < 0.0 {
                        return f64::INFINITY;
                    }
                    if *exponent == 0.0 {
                        return *scale;
                    }
                    return 0.0;
                }
                scale * base.powf(*exponent)
            }
            Piece::Custom(f) => f(t),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if let Piece::Power {
            scale,
            center,
            sign,
            exponent,
        } = self
        {
            let base = sign * (x - center);
            if base <= 0.0 {
                return self.eval_t(1.0 - x);
            }
            return scale * base.powf(*exponent);
        }
        self.eval_t(1.0 - x)
    }

    /// `t` in `[t_lo, t_hi]` where the piece equals `y`, for a piece that is
    /// nonincreasing in `t` and crosses `y` there.
    fn solve_t(&self, y: f64, t_lo: f64, t_hi: f64) -> f64 {
        if let Piece::Power {
            scale,
            center,
            sign,
            exponent,
        } = self
        {
            if *exponent != 0.0 {
                let base = (y / scale).powf(1.0 / exponent);
                // sign * ((1 - center) - t) = base
                let t = (1.0 - center) - base / sign;
                return t.clamp(t_lo, t_hi);
            }
        }
        let (mut lo, mut hi) = (t_lo, t_hi);
        for _ in 0..200 {
            let mid = if lo > 0.0 && hi / lo > 4.0 {
                (lo * hi).sqrt()
            } else {
                0.5 * (lo + hi)
            };
            if mid <= lo || mid >= hi {
                break;
            }
            // value decreases in t
            if self.eval_t(mid) > y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// `int G(x) dx` over `x` in `(1 - t_hi, 1 - t_lo)`.
    fn integral_t(&self, t_lo: f64, t_hi: f64, opts: &QuadOptions) -> Result<f64> {
        if t_hi <= t_lo {
            return Ok(0.0);
        }
        match self {
            Piece::Const(v) => Ok(v * (t_hi - t_lo)),
            Piece::Power {
                scale,
                center,
                sign,
                exponent,
            } => {
                let b1 = (sign * ((1.0 - center) - t_lo)).max(0.0);
                let b2 = (sign * ((1.0 - center) - t_hi)).max(0.0);
                let (lo, hi) = if b1 < b2 { (b1, b2) } else { (b2, b1) };
                let e1 = exponent + 1.0;
                if e1 == 0.0 {
                    if lo == 0.0 {
                        return Ok(f64::INFINITY);
                    }
                    return Ok(scale * (hi / lo).ln());
                }
                if e1 < 0.0 && lo == 0.0 {
                    return Ok(f64::INFINITY);
                }
                Ok(scale * (hi.powf(e1) - lo.powf(e1)) / e1)
            }
            Piece::Custom(f) => integrate(|t| f(t), t_lo, t_hi, opts),
        }
    }
}

/// Left-continuous nondecreasing quantile function on `(0, 1)`.
///
/// Piece `i` covers `(breaks[i], breaks[i + 1]]`, with `breaks[0] = 0` and
/// the last break equal to `1`.
#[derive(Clone, Debug)]
pub struct QuantileFn {
    breaks: Vec<f64>,
    pieces: Vec<Piece>,
}

impl QuantileFn {
    pub fn new(breaks: Vec<f64>, pieces: Vec<Piece>) -> Result<Self> {
        if breaks.len() != pieces.len() + 1 || pieces.is_empty() {
            return Err(Error::InvalidInput(
                "quantile needs one more break than pieces".into(),
            ));
        }
        if breaks[0] != 0.0 || *breaks.last().unwrap() != 1.0 {
            return Err(Error::InvalidInput("quantile breaks must run from 0 to 1".into()));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "quantile breaks must be strictly increasing".into(),
            ));
        }
        let g = Self { breaks, pieces };
        g.check_monotone()?;
        Ok(g)
    }

    fn check_monotone(&self) -> Result<()> {
        let mut prev = 0.0_f64;
        for (i, p) in self.pieces.iter().enumerate() {
            let (lo, hi) = (self.breaks[i], self.breaks[i + 1]);
            let start = p.eval_t(1.0 - lo);
            let end = p.eval_t(1.0 - hi);
            let slack = 1e-12 * prev.abs().max(1.0);
            if start.is_nan() || end.is_nan() || start < prev - slack || end < start - 1e-12 * start.abs().max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "quantile is not nondecreasing on piece {i} ({lo}, {hi}]"
                )));
            }
            prev = end;
        }
        if !(self.lower() > 0.0) && matches!(self.pieces[0], Piece::Const(_)) {
            return Err(Error::InvalidInput("quantile must be positive on (0, 1)".into()));
        }
        Ok(())
    }

    /// `G = c` on `(0, 1)`.
    pub fn constant(c: f64) -> Self {
        Self {
            breaks: vec![0.0, 1.0],
            pieces: vec![Piece::Const(c)],
        }
    }

    /// Step quantile taking `levels[i]` on `(i/n, (i+1)/n]`.
    pub fn uniform_steps(levels: &[f64]) -> Result<Self> {
        let n = levels.len();
        let breaks: Vec<f64> = (0..=n)
            .map(|i| if i == n { 1.0 } else { i as f64 / n as f64 })
            .collect();
        Self::new(breaks, levels.iter().map(|&v| Piece::Const(v)).collect()).map(|g| g.normalized())
    }

    /// Step quantile with the given breaks and levels.
    pub fn steps(breaks: Vec<f64>, levels: &[f64]) -> Result<Self> {
        Self::new(breaks, levels.iter().map(|&v| Piece::Const(v)).collect()).map(|g| g.normalized())
    }

    /// `scale * (1 - x)^(-exponent)` on `(0, 1)`, the quantile of a Pareto law.
    pub fn pareto_like(scale: f64, exponent: f64) -> Self {
        Self {
            breaks: vec![0.0, 1.0],
            pieces: vec![Piece::Power {
                scale,
                center: 1.0,
                sign: -1.0,
                exponent: -exponent,
            }],
        }
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Merges adjacent equal constants.
    pub fn normalized(mut self) -> Self {
        let mut breaks = vec![0.0];
        let mut pieces: Vec<Piece> = Vec::new();
        for (i, p) in self.pieces.drain(..).enumerate() {
            if let (Some(Piece::Const(prev)), Piece::Const(v)) = (pieces.last(), &p) {
                if prev == v {
                    *breaks.last_mut().unwrap() = self.breaks[i + 1];
                    continue;
                }
            }
            pieces.push(p);
            breaks.push(self.breaks[i + 1]);
        }
        Self { breaks, pieces }
    }

    fn piece_index(&self, x: f64) -> usize {
        // left-continuous: x in (b_i, b_{i+1}]
        let i = self.breaks.partition_point(|&b| b < x);
        i.saturating_sub(1).min(self.pieces.len() - 1)
    }

    /// `G(x)` for `x` in `(0, 1)`; `G(0) = 0` and `G(1)` is the left limit.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let x = x.min(1.0);
        let i = self.piece_index(x);
        self.pieces[i].eval(x)
    }

    /// `G(1 - t)`, accurate for tiny `t`.
    pub fn eval_t(&self, t: f64) -> f64 {
        if t >= 1.0 {
            return 0.0;
        }
        let x = 1.0 - t;
        let i = self.piece_index(x);
        self.pieces[i].eval_t(t)
    }

    /// `G(0+)`.
    pub fn lower(&self) -> f64 {
        self.pieces[0].eval_t(1.0)
    }

    /// `G(1-)`, `+inf` for unbounded support.
    pub fn upper(&self) -> f64 {
        self.pieces.last().unwrap().eval_t(0.0)
    }

    /// `int_0^1 G(x) dx`, possibly `+inf`.
    pub fn budget(&self) -> f64 {
        self.budget_with(&QuadOptions::default()).unwrap_or(f64::INFINITY)
    }

    pub fn budget_with(&self, opts: &QuadOptions) -> Result<f64> {
        let mut total = 0.0;
        for (i, p) in self.pieces.iter().enumerate() {
            let v = p.integral_t(1.0 - self.breaks[i + 1], 1.0 - self.breaks[i], opts)?;
            if v.is_infinite() {
                return Ok(f64::INFINITY);
            }
            total += v;
        }
        Ok(total)
    }

    /// `int_x^1 G(y) dy`, used by the barycenter.
    pub fn upper_integral(&self, x: f64, opts: &QuadOptions) -> Result<f64> {
        let mut total = 0.0;
        for (i, p) in self.pieces.iter().enumerate() {
            let (lo, hi) = (self.breaks[i].max(x), self.breaks[i + 1]);
            if hi <= lo {
                continue;
            }
            let v = p.integral_t(1.0 - hi, 1.0 - lo, opts)?;
            if v.is_infinite() {
                return Ok(f64::INFINITY);
            }
            total += v;
        }
        Ok(total)
    }

    /// `budget(G) <= s` up to a relative slack of `1e-9`.
    pub fn feasible(&self, s: f64) -> bool {
        self.budget() <= s * (1.0 + 1e-9)
    }

    /// Writes `x,G(x)` rows at the given abscissas.
    pub fn write_csv<W: Write>(&self, mut out: W, grid: &[f64]) -> std::io::Result<()> {
        writeln!(out, "x,G")?;
        for &x in grid {
            writeln!(out, "{},{}", x, self.eval(x))?;
        }
        Ok(())
    }
}

/// One piece of a distribution function.
#[derive(Clone, Debug)]
pub enum CdfPiece {
    /// `F` constant.
    Flat(f64),
    /// Inverse of a quantile piece covering `x` in `(x_lo, x_hi]`.
    Inverse { x_lo: f64, x_hi: f64, piece: Piece },
}

/// Right-continuous distribution function on `[0, inf)`.
///
/// Piece `i` covers `[knots[i], knots[i + 1])`; `F = 0` left of the first
/// knot and `F = 1` from the last knot on (which may be `+inf`).
#[derive(Clone, Debug)]
pub struct Cdf {
    knots: Vec<f64>,
    pieces: Vec<CdfPiece>,
}

impl Cdf {
    /// Step CDF with `F = levels[i]` on `[points[i], points[i + 1])` and
    /// `F = 1` from the last point. `levels` has one entry fewer than
    /// `points`.
    pub fn steps(points: &[f64], levels: &[f64]) -> Result<Self> {
        if points.is_empty() || levels.len() + 1 != points.len() {
            return Err(Error::InvalidInput(
                "step CDF needs one level per point except the last".into(),
            ));
        }
        if !(points[0] > 0.0) || points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "step CDF points must be positive and strictly increasing".into(),
            ));
        }
        let mut prev = 0.0;
        for &c in levels {
            if !(c > prev - 1e-15 && c < 1.0) || c <= 0.0 {
                return Err(Error::InvalidInput(
                    "step CDF levels must be nondecreasing in (0, 1)".into(),
                ));
            }
            prev = c;
        }
        Ok(Self {
            knots: points.to_vec(),
            pieces: levels.iter().map(|&c| CdfPiece::Flat(c)).collect(),
        })
    }

    /// Point mass at `c`.
    pub fn point_mass(c: f64) -> Self {
        Self {
            knots: vec![c],
            pieces: Vec::new(),
        }
    }

    /// `F(y) = 1 - (x_min / y)^index` for `y >= x_min`.
    pub fn pareto(x_min: f64, index: f64) -> Self {
        cdf_of(&QuantileFn::pareto_like(x_min, 1.0 / index))
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn pieces(&self) -> &[CdfPiece] {
        &self.pieces
    }

    /// Infimum of the support.
    pub fn support_min(&self) -> f64 {
        self.knots[0]
    }

    /// Supremum of the support, possibly `+inf`.
    pub fn support_max(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    fn piece_eval(&self, i: usize, y: f64) -> f64 {
        match &self.pieces[i] {
            CdfPiece::Flat(c) => *c,
            CdfPiece::Inverse { x_lo, x_hi, piece } => {
                let t = piece.solve_t(y, 1.0 - x_hi, 1.0 - x_lo);
                1.0 - t
            }
        }
    }

    /// `F(y)`.
    pub fn eval(&self, y: f64) -> f64 {
        if y < self.knots[0] {
            return 0.0;
        }
        let i = self.knots.partition_point(|&k| k <= y) - 1;
        if i >= self.pieces.len() {
            return 1.0;
        }
        self.piece_eval(i, y)
    }

    /// `F(y-)`.
    pub fn left_limit(&self, y: f64) -> f64 {
        if y <= self.knots[0] {
            return 0.0;
        }
        let i = self.knots.partition_point(|&k| k < y) - 1;
        if i >= self.pieces.len() {
            return 1.0;
        }
        self.piece_eval(i, y)
    }

    /// `int_0^inf (1 - F(y)) dy`, possibly `+inf`.
    pub fn budget(&self) -> f64 {
        left_inverse(self).budget()
    }

    /// Mean of the law, equal to [`Cdf::budget`].
    pub fn mean(&self) -> f64 {
        self.budget()
    }

    /// Writes `x,F(x)` rows at the given abscissas.
    pub fn write_csv<W: Write>(&self, mut out: W, grid: &[f64]) -> std::io::Result<()> {
        writeln!(out, "x,F")?;
        for &y in grid {
            writeln!(out, "{},{}", y, self.eval(y))?;
        }
        Ok(())
    }
}

/// `G(x) = inf{y : F(y) >= x}`.
pub fn left_inverse(f: &Cdf) -> QuantileFn {
    let mut breaks = vec![0.0];
    let mut pieces = Vec::new();
    let mut level = 0.0_f64;
    for (i, &k) in f.knots.iter().enumerate() {
        let (start, next) = if i < f.pieces.len() {
            match &f.pieces[i] {
                CdfPiece::Flat(c) => (*c, None),
                CdfPiece::Inverse { x_lo, x_hi, piece } => (*x_lo, Some((*x_hi, piece.clone()))),
            }
        } else {
            (1.0, None)
        };
        if start > level {
            pieces.push(Piece::Const(k));
            breaks.push(start);
            level = start;
        }
        if let Some((x_hi, piece)) = next {
            if x_hi > level {
                pieces.push(piece);
                breaks.push(x_hi);
                level = x_hi;
            }
        }
    }
    if level < 1.0 {
        // unbounded last piece already ends at 1; guard against rounding
        *breaks.last_mut().unwrap() = 1.0;
    }
    QuantileFn { breaks, pieces }.normalized()
}

/// Distribution function of a quantile: `F(y) = sup{x : G(x) <= y}`.
pub fn cdf_of(g: &QuantileFn) -> Cdf {
    let mut knots = Vec::new();
    let mut pieces = Vec::new();
    for (i, p) in g.pieces.iter().enumerate() {
        let (lo, hi) = (g.breaks[i], g.breaks[i + 1]);
        match p {
            Piece::Const(v) => {
                // mass (lo, hi] sits at v; F = hi from v up to the next level
                if let Some(&last) = knots.last() {
                    if last == *v {
                        pieces.pop();
                        knots.pop();
                    }
                }
                knots.push(*v);
                pieces.push(CdfPiece::Flat(hi));
            }
            _ => {
                let start = p.eval_t(1.0 - lo);
                if let Some(&last) = knots.last() {
                    if last == start {
                        pieces.pop();
                        knots.pop();
                    }
                }
                knots.push(start);
                pieces.push(CdfPiece::Inverse {
                    x_lo: lo,
                    x_hi: hi,
                    piece: p.clone(),
                });
                let end = p.eval_t(1.0 - hi);
                if i + 1 < g.pieces.len() || end.is_finite() {
                    knots.push(end);
                    pieces.push(CdfPiece::Flat(hi));
                }
            }
        }
    }
    // the final flat piece at level 1 is implicit
    if let Some(CdfPiece::Flat(c)) = pieces.last() {
        if *c >= 1.0 {
            pieces.pop();
        }
    }
    if pieces.len() == knots.len() {
        // unbounded support: close with +inf
        knots.push(f64::INFINITY);
    }
    // drop empty intervals produced by pieces that start where the previous ended
    let mut k2 = vec![knots[0]];
    let mut p2 = Vec::new();
    for (j, piece) in pieces.into_iter().enumerate() {
        if knots[j + 1] > knots[j] {
            p2.push(piece);
            k2.push(knots[j + 1]);
        }
    }
    Cdf {
        knots: k2,
        pieces: p2,
    }
}

/// Crossing points of a quantile piece with the kinks of `u`, in `t`.
fn kink_crossings_t(p: &Piece, t_lo: f64, t_hi: f64, kinks: &[f64]) -> Vec<f64> {
    if matches!(p, Piece::Const(_)) {
        return Vec::new();
    }
    let (g_hi, g_lo) = (p.eval_t(t_lo), p.eval_t(t_hi));
    kinks
        .iter()
        .filter(|&&k| k > g_lo && k < g_hi)
        .map(|&k| p.solve_t(k, t_lo, t_hi))
        .collect()
}

/// `J_Q(G) = int_0^1 u(G(x)) w'(1 - x) dx` with the normalized payoff.
pub fn choquet_value_quantile(g: &QuantileFn, u: &TransformedPayoff, w: &DistortionFn) -> Result<f64> {
    choquet_value_quantile_with(g, u, w, &QuadOptions::default())
}

pub fn choquet_value_quantile_with(
    g: &QuantileFn,
    u: &TransformedPayoff,
    w: &DistortionFn,
    opts: &QuadOptions,
) -> Result<f64> {
    let wb: Vec<f64> = w.breakpoints().iter().map(|p| 1.0 - p).collect();
    let mut total = 0.0;
    for (i, p) in g.pieces.iter().enumerate() {
        let (x_lo, x_hi) = (g.breaks[i], g.breaks[i + 1]);
        let v = match p {
            Piece::Const(c) => u.eval(*c) * (w.eval(1.0 - x_lo) - w.eval(1.0 - x_hi)),
            _ => {
                let (t_lo, t_hi) = (1.0 - x_hi, 1.0 - x_lo);
                let mut br = wb.clone();
                br.extend(kink_crossings_t(p, t_lo, t_hi, u.kinks()));
                integrate_pieces(|t| u.eval(p.eval_t(t)) * w.deriv(t), t_lo, t_hi, &br, opts)?
            }
        };
        if v.is_infinite() {
            return Ok(f64::INFINITY);
        }
        total += v;
    }
    Ok(total)
}

/// `J_D(F) = int_0^inf w(1 - F(y)) u'(y) dy` with the normalized payoff.
pub fn choquet_value_dist(f: &Cdf, u: &TransformedPayoff, w: &DistortionFn) -> Result<f64> {
    choquet_value_dist_with(f, u, w, &QuadOptions::default())
}

pub fn choquet_value_dist_with(
    f: &Cdf,
    u: &TransformedPayoff,
    w: &DistortionFn,
    opts: &QuadOptions,
) -> Result<f64> {
    // below the support w(1 - F) = 1
    let mut total = u.eval(f.knots[0]);
    for (i, piece) in f.pieces.iter().enumerate() {
        let (y0, y1) = (f.knots[i], f.knots[i + 1]);
        let v = match piece {
            CdfPiece::Flat(c) => {
                let du = if y1.is_infinite() {
                    return Err(Error::InvalidInput("flat CDF piece on an unbounded interval".into()));
                } else {
                    u.eval(y1) - u.eval(y0)
                };
                w.eval(1.0 - c) * du
            }
            CdfPiece::Inverse { x_lo, x_hi, piece } => {
                let (t_lo, t_hi) = (1.0 - x_hi, 1.0 - x_lo);
                let tail = |y: f64| {
                    let t = piece.solve_t(y, t_lo, t_hi);
                    w.eval(t) * u.deriv(y)
                };
                let mut br: Vec<f64> = u.kinks().to_vec();
                for p in w.breakpoints() {
                    let t = 1.0 - p;
                    if t > t_lo && t < t_hi {
                        br.push(piece.eval_t(t));
                    }
                }
                if y1.is_infinite() {
                    integrate_pieces_to_inf(tail, y0, &br, opts)?
                } else {
                    integrate_pieces(tail, y0, y1, &br, opts)?
                }
            }
        };
        if v.is_infinite() {
            return Ok(f64::INFINITY);
        }
        total += v;
    }
    Ok(total)
}

/// Marginal-payoff inverses `(u')^{-1}` restricted to `[from, inf)`, where
/// `u'` must be nonincreasing.
#[derive(Clone, Copy, Debug)]
pub struct EnvelopeInverse<'a> {
    u: &'a TransformedPayoff,
    from: f64,
}

impl<'a> EnvelopeInverse<'a> {
    pub fn new(u: &'a TransformedPayoff) -> Self {
        Self { u, from: 0.0 }
    }

    /// Restricts the search to `[from, inf)`, the concave part of an
    /// S-shaped payoff.
    pub fn from(u: &'a TransformedPayoff, from: f64) -> Self {
        Self { u, from }
    }

    /// `inf{z >= from : u'(z) <= y}`.
    pub fn lower(&self, y: f64) -> f64 {
        if let Some(z) = self.closed_form(y) {
            return z;
        }
        self.search(|d| d <= y)
    }

    /// `inf{z >= from : u'(z) < y}`.
    pub fn upper(&self, y: f64) -> f64 {
        if let Some(z) = self.closed_form(y) {
            return z;
        }
        self.search(|d| d < y)
    }

    /// Strictly decreasing power marginal on `[from, inf)`: both inverses agree.
    fn closed_form(&self, y: f64) -> Option<f64> {
        let (z0, c, r) = self.u.power_tail()?;
        if self.from < z0 || r >= 1.0 {
            return None;
        }
        Some(power_envelope(c, r, y).max(self.from))
    }

    fn search<P: Fn(f64) -> bool>(&self, pred: P) -> f64 {
        let u = self.u;
        let z0 = self.from;
        if pred(u.deriv(z0)) {
            return z0;
        }
        let mut lo = z0;
        let mut hi = z0.max(1.0);
        while !pred(u.deriv(hi)) {
            lo = hi;
            hi *= 4.0;
            if hi > 1e300 {
                return f64::INFINITY;
            }
        }
        if lo == 0.0 {
            // geometric bisection needs a positive left end
            let mut l = 0.25 * hi;
            while pred(u.deriv(l)) {
                l *= 0.25;
                if l < 1e-300 {
                    return 0.0;
                }
            }
            lo = l;
        }
        for _ in 0..400 {
            let mid = if hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
            if mid <= lo || mid >= hi {
                break;
            }
            if pred(u.deriv(mid)) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

fn power_envelope(c: f64, r: f64, y: f64) -> f64 {
    // u'(z) = c r z^(r-1), strictly decreasing
    if y <= 0.0 {
        return f64::INFINITY;
    }
    if y.is_infinite() {
        return 0.0;
    }
    (y / (c * r)).powf(1.0 / (r - 1.0))
}

/// `inf{z >= 0 : u'(z) <= y}`.
pub fn envelope_lower(u: &TransformedPayoff, y: f64) -> f64 {
    EnvelopeInverse::new(u).lower(y)
}

/// `inf{z >= 0 : u'(z) < y}`.
pub fn envelope_upper(u: &TransformedPayoff, y: f64) -> f64 {
    EnvelopeInverse::new(u).upper(y)
}
