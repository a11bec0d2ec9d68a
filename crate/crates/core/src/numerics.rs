//! Numerical kernels shared by the solvers: double-exponential quadrature,
//! monotone root finding, golden-section search and grids.
//!
//! The quadrature is tanh-sinh on finite panels and exp-sinh on half lines.
//! Both place nodes double-exponentially close to the panel ends, so
//! integrable algebraic endpoint singularities such as `t^{-1/2}` at `t = 0`
//! converge without special treatment. Nodes are generated as offsets from
//! the nearest endpoint, which keeps them exact when that endpoint is `0`.
//! Integrands singular at a nonzero endpoint should be rewritten in a
//! coordinate where the singularity sits at the origin.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// Tolerances for [`integrate`] and friends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Finest tanh-sinh level on a single panel (step `2^-max_level`).
    pub max_level: u32,
    /// Maximum bisection depth of the composite scheme.
    pub max_depth: u32,
    /// Partial sums above this are reported as `+inf`.
    pub divergence_cap: f64,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-12,
            max_level: 8,
            max_depth: 20,
            divergence_cap: 1e12,
        }
    }
}

struct Panel {
    value: f64,
    error: f64,
}

enum PanelOutcome {
    Done(Panel),
    Diverged,
}

// Largest |u| for which the weights are still representable.
const U_MAX: f64 = 350.0;

fn ts_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, opts: &QuadOptions) -> PanelOutcome {
    let hl = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut total = hl * FRAC_PI_2 * f(mid);
    if !total.is_finite() {
        return PanelOutcome::Diverged;
    }
    let mut prev = f64::NAN;
    let mut h = 1.0_f64;
    let mut estimate = total * h;
    // tail tracking for the log-divergence test
    let mut edge_left: Option<(f64, f64)> = None;
    let mut edge_right: Option<(f64, f64)> = None;
    let mut inner_left: Option<(f64, f64)> = None;
    let mut inner_right: Option<(f64, f64)> = None;

    for level in 0..=opts.max_level {
        let (start, step) = if level == 0 { (1usize, 1usize) } else { (1usize, 2usize) };
        let mut j = start;
        loop {
            let tau = j as f64 * h;
            let u = FRAC_PI_2 * tau.sinh();
            if u > U_MAX {
                break;
            }
            let d = hl * 2.0 / (1.0 + (2.0 * u).exp());
            let ch = u.cosh();
            let weight = hl * FRAC_PI_2 * tau.cosh() / (ch * ch);
            if d <= 0.0 || weight == 0.0 {
                break;
            }
            let xr = b - d;
            let xl = a + d;
            let mut contrib = 0.0;
            if xr < b {
                let fx = f(xr);
                contrib += weight * fx;
                if d < hl * 1e-100 {
                    if inner_right.is_none() {
                        inner_right = Some((d, fx));
                    }
                    edge_right = Some((d, fx));
                }
            }
            if xl > a {
                let fx = f(xl);
                contrib += weight * fx;
                if d < hl * 1e-100 {
                    if inner_left.is_none() {
                        inner_left = Some((d, fx));
                    }
                    edge_left = Some((d, fx));
                }
            }
            if !contrib.is_finite() {
                return PanelOutcome::Diverged;
            }
            total += contrib;
            j += step;
        }
        let next = total * h;
        if next.abs() > opts.divergence_cap || !next.is_finite() {
            return PanelOutcome::Diverged;
        }
        if level >= 3 {
            let err = (next - estimate).abs();
            let tol = opts.abs_tol.max(opts.rel_tol * next.abs());
            if err <= tol || (level == opts.max_level && err.is_finite()) {
                prev = err;
                estimate = next;
                if err <= tol {
                    break;
                }
                continue;
            }
        }
        prev = (next - estimate).abs();
        estimate = next;
        h *= 0.5;
    }

    // t * f(t) must vanish at an integrable endpoint; a flat or growing
    // product over hundreds of decades signals a log (or worse) divergence
    for (inner, edge) in [(inner_left, edge_left), (inner_right, edge_right)] {
        if let (Some((d1, f1)), Some((d2, f2))) = (inner, edge) {
            let r1 = (d1 * f1).abs();
            let r2 = (d2 * f2).abs();
            if d2 < d1 * 1e-100 && r2 > 0.5 * r1 && r2 > 1e-6 * estimate.abs().max(1e-300) {
                return PanelOutcome::Diverged;
            }
        }
    }

    PanelOutcome::Done(Panel {
        value: estimate,
        error: prev,
    })
}

fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
    depth: u32,
    opts: &QuadOptions,
) -> Result<f64> {
    let local = QuadOptions {
        abs_tol: tol,
        ..*opts
    };
    match ts_panel(f, a, b, &local) {
        PanelOutcome::Diverged => Ok(f64::INFINITY),
        PanelOutcome::Done(p) => {
            let target = tol.max(opts.rel_tol * p.value.abs());
            if p.error <= target {
                return Ok(p.value);
            }
            if depth >= opts.max_depth {
                return Err(Error::Quadrature {
                    partial: p.value,
                    achieved: p.error,
                });
            }
            let m = 0.5 * (a + b);
            if !(m > a && m < b) {
                return Ok(p.value);
            }
            let left = adaptive(f, a, m, 0.5 * tol, depth + 1, opts)?;
            let right = adaptive(f, m, b, 0.5 * tol, depth + 1, opts)?;
            Ok(left + right)
        }
    }
}

/// Integrates `f` over `[a, b]`. Returns `+inf` when the integral diverges
/// upward (partial sums beyond the divergence cap or a nonvanishing
/// endpoint product `t f(t)`).
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: &QuadOptions) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let v = adaptive(&f, a, b, opts.abs_tol, 0, opts)?;
    if v.is_infinite() || v.abs() > opts.divergence_cap {
        return Ok(f64::INFINITY);
    }
    Ok(v)
}

/// Integrates over `[a, b]` split at the given interior breakpoints.
pub fn integrate_pieces<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    opts: &QuadOptions,
) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    pts.sort_by(|x, y| x.total_cmp(y));
    pts.dedup();
    let mut edges = Vec::with_capacity(pts.len() + 2);
    edges.push(a);
    edges.extend(pts);
    edges.push(b);
    let n = (edges.len() - 1) as f64;
    let piece_opts = QuadOptions {
        abs_tol: opts.abs_tol / n,
        ..*opts
    };
    let mut total = 0.0;
    for w in edges.windows(2) {
        let v = integrate(&f, w[0], w[1], &piece_opts)?;
        if v.is_infinite() {
            return Ok(f64::INFINITY);
        }
        total += v;
    }
    Ok(total)
}

/// Integrates `f` over `[a, inf)` with exp-sinh nodes `x = a + exp(pi/2 sinh t)`.
pub fn integrate_to_inf<F: Fn(f64) -> f64>(f: F, a: f64, opts: &QuadOptions) -> Result<f64> {
    let node = |tau: f64| -> (f64, f64) {
        let e = (FRAC_PI_2 * tau.sinh()).exp();
        (e, FRAC_PI_2 * tau.cosh() * e)
    };
    let mut h = 1.0_f64;
    let (d0, w0) = node(0.0);
    let mut total = w0 * f(a + d0);
    let mut estimate = f64::NAN;
    let mut err = f64::INFINITY;
    for level in 0..=opts.max_level + 1 {
        let step = if level == 0 { 1i64 } else { 2i64 };
        for sign in [1.0, -1.0] {
            let mut j = 1i64;
            loop {
                let tau = sign * j as f64 * h;
                let (d, w) = node(tau);
                if !w.is_finite() || d > 1e300 || w == 0.0 {
                    break;
                }
                let x = a + d;
                if x <= a {
                    break;
                }
                let fx = f(x);
                let c = w * fx;
                if !c.is_finite() {
                    if fx == 0.0 {
                        break;
                    }
                    return Ok(f64::INFINITY);
                }
                total += c;
                // far tail: both weight growth and decay of f are monotone here
                if sign > 0.0 && j > 8 && c.abs() < 1e-18 * total.abs().max(1e-300) {
                    break;
                }
                j += step;
            }
        }
        let next = total * h;
        if !next.is_finite() || next.abs() > opts.divergence_cap {
            return Ok(f64::INFINITY);
        }
        if level >= 3 {
            err = (next - estimate).abs();
            estimate = next;
            if err <= opts.abs_tol.max(opts.rel_tol * next.abs()) {
                return Ok(estimate);
            }
        } else {
            estimate = next;
        }
        h *= 0.5;
    }
    Err(Error::Quadrature {
        partial: estimate,
        achieved: err,
    })
}

/// Integrates over `[a, inf)` with interior breakpoints; the last piece is
/// handled by [`integrate_to_inf`].
pub fn integrate_pieces_to_inf<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    breaks: &[f64],
    opts: &QuadOptions,
) -> Result<f64> {
    let mut pts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|&x| x > a && x.is_finite())
        .collect();
    pts.sort_by(|x, y| x.total_cmp(y));
    pts.dedup();
    let mut total = 0.0;
    let mut lo = a;
    for &p in &pts {
        let v = integrate(&f, lo, p, opts)?;
        if v.is_infinite() {
            return Ok(f64::INFINITY);
        }
        total += v;
        lo = p;
    }
    let tail = integrate_to_inf(&f, lo, opts)?;
    Ok(total + tail)
}

/// Finds `x` in `[lo, hi]` where a nonincreasing `f` crosses `target`
/// (largest `x` with `f(x) >= target`, up to bracket width).
pub fn bisect_decreasing<F: Fn(f64) -> f64>(
    f: F,
    target: f64,
    mut lo: f64,
    mut hi: f64,
    iters: usize,
) -> f64 {
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Same as [`bisect_decreasing`] for a nondecreasing `f`: returns the
/// crossing point where `f` passes `target` from below.
pub fn bisect_increasing<F: Fn(f64) -> f64>(
    f: F,
    target: f64,
    mut lo: f64,
    mut hi: f64,
    iters: usize,
) -> f64 {
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Solves `f(x) = target` for a nonincreasing `f` on `[lo, hi]` (`0 < lo`),
/// working in `ln x`. Uses the Illinois variant of regula falsi and falls
/// back to bisection where `f` is infinite. Returns `None` when the target
/// is not bracketed.
pub fn root_decreasing_log<F: FnMut(f64) -> f64>(
    mut f: F,
    target: f64,
    lo: f64,
    hi: f64,
    rel_tol: f64,
    max_iter: usize,
) -> Option<f64> {
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut fa = f(lo) - target;
    let mut fb = f(hi) - target;
    if fa == 0.0 {
        return Some(lo);
    }
    if fb == 0.0 {
        return Some(hi);
    }
    if !(fa > 0.0 && fb < 0.0) {
        return None;
    }
    let scale = target.abs().max(f64::MIN_POSITIVE);
    let mut side = 0i8;
    for _ in 0..max_iter {
        let c = if fa.is_finite() {
            let c = (a * fb - b * fa) / (fb - fa);
            if c > a && c < b {
                c
            } else {
                0.5 * (a + b)
            }
        } else {
            0.5 * (a + b)
        };
        let fc = f(c.exp()) - target;
        if fc.abs() <= rel_tol * scale || (b - a) < 1e-15 * a.abs().max(1.0) {
            return Some(c.exp());
        }
        if fc > 0.0 {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        } else {
            b = c;
            fb = fc;
            if side == -1 && fa.is_finite() {
                fa *= 0.5;
            }
            side = -1;
        }
    }
    Some((0.5 * (a + b)).exp())
}

/// Golden-section maximization of `f` on `[lo, hi]`. Returns `(argmax, max)`
/// including the endpoints in the comparison.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for x in [lo, hi] {
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && n >= 1);
    if n == 1 {
        return vec![lo];
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn lin_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn smooth_polynomial() {
        let v = integrate(|x| 3.0 * x * x, 0.0, 2.0, &QuadOptions::default()).unwrap();
        assert_abs_diff_eq!(v, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_sqrt_endpoint_singularity() {
        let v = integrate(|t| t.powf(-0.5), 0.0, 1.0, &QuadOptions::default()).unwrap();
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-10);
        let v = integrate(|t| t.powf(-0.9), 0.0, 1.0, &QuadOptions::default()).unwrap();
        assert_abs_diff_eq!(v, 10.0, epsilon = 1e-8);
    }

    #[test]
    fn divergent_endpoint_is_flagged() {
        let v = integrate(|t| 1.0 / t, 0.0, 1.0, &QuadOptions::default()).unwrap();
        assert!(v.is_infinite());
        let v = integrate(|t| t.powf(-1.5), 0.0, 1.0, &QuadOptions::default()).unwrap();
        assert!(v.is_infinite());
    }

    #[test]
    fn half_line() {
        let o = QuadOptions::default();
        assert_abs_diff_eq!(integrate_to_inf(|x| (-x).exp(), 0.0, &o).unwrap(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(integrate_to_inf(|x| x.powi(-2), 0.5, &o).unwrap(), 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(
            integrate_to_inf(|x| x.powf(-1.1), 1.0, &o).unwrap(),
            10.0,
            epsilon = 1e-7
        );
    }

    #[test]
    fn kinked_integrand_with_breakpoint() {
        let f = |x: f64| (x - 0.3).abs();
        let v = integrate_pieces(f, 0.0, 1.0, &[0.3], &QuadOptions::default()).unwrap();
        assert_abs_diff_eq!(v, 0.5 * 0.09 + 0.5 * 0.49, epsilon = 1e-12);
    }

    #[test]
    fn golden_section_finds_interior_max() {
        let (x, v) = golden_max(|x| -(x - 0.7).powi(2) + 1.0, 0.0, 2.0, 80);
        assert_abs_diff_eq!(x, 0.7, epsilon = 1e-8);
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bisection_monotone() {
        let x = bisect_decreasing(|x| 1.0 / x, 4.0, 0.01, 10.0, 200);
        assert_abs_diff_eq!(x, 0.25, epsilon = 1e-12);
        let x = bisect_increasing(|x| x * x, 2.0, 0.0, 2.0, 200);
        assert_abs_diff_eq!(x, 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn log_root_with_infinite_left_end() {
        let f = |x: f64| if x < 1e-3 { f64::INFINITY } else { 1.0 / x };
        let r = root_decreasing_log(f, 4.0, 1e-6, 1e3, 1e-14, 200).unwrap();
        assert_abs_diff_eq!(r, 0.25, epsilon = 1e-12);
        assert!(root_decreasing_log(|x| 1.0 / x, 4.0, 1.0, 2.0, 1e-12, 100).is_none());
    }

    #[test]
    fn grids_hit_endpoints() {
        let g = log_space(1e-4, 1e4, 512);
        assert_eq!(g.len(), 512);
        assert_eq!(g[0], 1e-4);
        assert_eq!(g[511], 1e4);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
