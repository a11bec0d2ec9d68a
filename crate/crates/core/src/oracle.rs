//! Independent checks: brute-force maximization of `J_Q` over step
//! quantiles, and the constructive decomposition of step CDFs into
//! two-jump CDFs with the same mean.
//!
//! The search modes:
//!
//! * two-level exhaustive: every pair `a <= s <= b` of grid levels, with the
//!   mass at `a` fixed by the budget;
//! * Lagrangian dynamic program: for `n <= 400` atoms on the uniform grid,
//!   maximize `sum u(g_i) w_i - lambda g_i / n` over nondecreasing grid
//!   levels, bisect on `lambda`, and project the candidates to the budget by
//!   uniform scaling. The problem is not concave in general, so the
//!   candidates also include splices of the two solutions bracketing the
//!   budget, and "floor then Lagrangian suffix" assignments over a band of
//!   multipliers. A second pass repeats the search on a denser grid around
//!   the incumbent;
//! * coordinate ascent with seeded multi-starts for larger `n`.
//!
//! Decompositions run in exact rational arithmetic.

use num::{BigRational, One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DistortionFn, TransformedPayoff};
use crate::numerics::log_space;
use crate::quantile::Cdf;

/// Largest `n` searched by the dynamic program.
pub const EXHAUSTIVE_MAX_N: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    TwoLevel,
    Lagrangian,
    CoordinateAscent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleOptions {
    /// Atoms of the step quantile.
    pub n: usize,
    /// Points of the log-spaced level grid.
    pub levels: usize,
    /// Grid spans `[s * lo_factor, s * hi_factor]`.
    pub lo_factor: f64,
    pub hi_factor: f64,
    /// Multi-starts of the coordinate ascent.
    pub starts: usize,
    pub seed: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            n: 200,
            levels: 200,
            lo_factor: 1e-3,
            hi_factor: 1e3,
            starts: 20,
            seed: 1,
        }
    }
}

impl OracleOptions {
    pub fn level_grid(&self, s: f64) -> Vec<f64> {
        log_space(s * self.lo_factor, s * self.hi_factor, self.levels.max(2))
    }
}

/// Nondecreasing atoms `g_1 <= ... <= g_n` on the cells `((i-1)/n, i/n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepQuantile {
    pub atoms: Vec<f64>,
}

impl StepQuantile {
    pub fn budget(&self) -> f64 {
        self.atoms.iter().sum::<f64>() / self.atoms.len() as f64
    }

    /// `sum_i u(g_i) [w(1 - (i-1)/n) - w(1 - i/n)]` with the unnormalized payoff.
    pub fn value(&self, u: &TransformedPayoff, w: &DistortionFn) -> f64 {
        let weights = cell_weights(w, self.atoms.len());
        self.atoms.iter().zip(&weights).map(|(&g, &wt)| u.eval_raw(g) * wt).sum()
    }
}

/// Result of a brute-force search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub mode: SearchMode,
    pub n: usize,
    pub value: f64,
    /// For the two-level mode: `[a, b]`; otherwise the atoms.
    pub levels: Vec<f64>,
    /// Mass at the lower level in the two-level mode.
    pub mass_low: Option<f64>,
    pub budget: f64,
    /// The incumbent grew by more than 1% when the level grid was widened.
    pub unbounded_suspected: bool,
}

/// `w(1 - (i-1)/n) - w(1 - i/n)` for `i = 1..=n`.
pub fn cell_weights(w: &DistortionFn, n: usize) -> Vec<f64> {
    let nf = n as f64;
    (1..=n).map(|i| w.eval(1.0 - (i - 1) as f64 / nf) - w.eval(1.0 - i as f64 / nf)).collect()
}

/// Exhaustive search over two-point laws `{a, b}` with `a <= s <= b` on the
/// grid; the mass at `a` is `(b - s) / (b - a)`.
pub fn brute_force_two_level(u: &TransformedPayoff, w: &DistortionFn, s: f64, grid: &[f64]) -> OracleReport {
    let us: Vec<f64> = grid.iter().map(|&x| u.eval_raw(x)).collect();
    let mut best = (u.eval_raw(s), s, s, 1.0);
    for (i, &a) in grid.iter().enumerate() {
        if a > s {
            break;
        }
        for (j, &b) in grid.iter().enumerate() {
            if b <= s {
                continue;
            }
            let p_up = (s - a) / (b - a);
            let v = us[i] + (us[j] - us[i]) * w.eval(p_up);
            if v > best.0 {
                best = (v, a, b, 1.0 - p_up);
            }
        }
    }
    let (value, a, b, c) = best;
    OracleReport {
        mode: SearchMode::TwoLevel,
        n: 2,
        value,
        levels: vec![a, b],
        mass_low: Some(c),
        budget: c * a + (1.0 - c) * b,
        unbounded_suspected: false,
    }
}

/// Best nondecreasing grid assignment for `sum (u_k w_i - lambda L_k / n)`.
fn lagrangian_dp(us: &[f64], grid: &[f64], weights: &[f64], lambda: f64) -> Vec<f64> {
    let n = weights.len();
    let m = grid.len();
    let nf = n as f64;
    let mut choice = vec![0u16; n * m];
    let mut best = vec![0.0; m];
    for (i, &wt) in weights.iter().enumerate() {
        // prefix maximum of the previous row
        let mut run = f64::NEG_INFINITY;
        let mut arg = 0usize;
        for k in 0..m {
            if i == 0 || best[k] > run {
                run = if i == 0 { 0.0 } else { best[k] };
                arg = k;
            }
            choice[i * m + k] = arg as u16;
            best[k] = run + us[k] * wt - lambda * grid[k] / nf;
        }
    }
    let mut k = (0..m).max_by(|&x, &y| best[x].total_cmp(&best[y])).unwrap_or(0);
    let mut atoms = vec![0.0; n];
    for i in (0..n).rev() {
        atoms[i] = grid[k];
        k = choice[i * m + k] as usize;
    }
    atoms
}

/// Spends unused budget on single atoms, each raised at most to the next
/// atom, picking the best gain each round.
fn fill_slack(atoms: &[f64], s: f64, u: &TransformedPayoff, weights: &[f64]) -> Vec<f64> {
    let n = atoms.len();
    let mut g = atoms.to_vec();
    for _ in 0..8 {
        let slack = s - g.iter().sum::<f64>() / n as f64;
        if slack <= 1e-12 * s {
            break;
        }
        let mut best: Option<(f64, usize, f64)> = None;
        for i in 0..n {
            let cap = if i + 1 < n { g[i + 1] } else { f64::INFINITY };
            let level = (g[i] + slack * n as f64).min(cap);
            if level <= g[i] {
                continue;
            }
            let gain = (u.eval_raw(level) - u.eval_raw(g[i])) * weights[i];
            if best.is_none_or(|b| gain > b.0) {
                best = Some((gain, i, level));
            }
        }
        match best {
            Some((gain, i, level)) if gain > 0.0 => g[i] = level,
            _ => break,
        }
    }
    g
}

/// Projects `atoms` to the budget: infeasible candidates are scaled down;
/// feasible ones keep the best of themselves, their uniform scaling to
/// budget `s`, and their slack-filled version.
fn project(atoms: &[f64], s: f64, u: &TransformedPayoff, weights: &[f64]) -> (f64, Vec<f64>) {
    let value = |g: &[f64]| g.iter().zip(weights).map(|(&x, &wt)| u.eval_raw(x) * wt).sum::<f64>();
    let budget = atoms.iter().sum::<f64>() / atoms.len() as f64;
    let scaled: Vec<f64> = atoms.iter().map(|g| g * s / budget).collect();
    if budget > s {
        return (value(&scaled), scaled);
    }
    let filled = fill_slack(atoms, s, u, weights);
    [atoms.to_vec(), scaled, filled]
        .into_iter()
        .map(|g| (value(&g), g))
        .fold((f64::NEG_INFINITY, Vec::new()), |acc, c| if c.0 > acc.0 { c } else { acc })
}

/// For every start cell `j`: cells below `j` at the lowest grid level and
/// cells from `j` on at the best nondecreasing Lagrangian assignment.
fn floor_suffix(us: &[f64], grid: &[f64], weights: &[f64], lambda: f64) -> Vec<Vec<f64>> {
    let n = weights.len();
    let m = grid.len();
    let nf = n as f64;
    // best[k]: value of cells i.. with g_i >= grid[k]; choice[i][k] the level taken at i
    let mut choice = vec![0u16; n * m];
    let mut next = vec![0.0; m];
    let mut best = vec![0.0; m];
    for i in (0..n).rev() {
        let mut run = f64::NEG_INFINITY;
        let mut arg = m - 1;
        for k in (0..m).rev() {
            let v = us[k] * weights[i] - lambda * grid[k] / nf + if i + 1 < n { next[k] } else { 0.0 };
            if v > run {
                run = v;
                arg = k;
            }
            best[k] = run;
            choice[i * m + k] = arg as u16;
        }
        std::mem::swap(&mut next, &mut best);
    }
    (0..n)
        .map(|j| {
            let mut g = vec![grid[0]; n];
            let mut k = 0;
            for (i, gi) in g.iter_mut().enumerate().skip(j) {
                k = choice[i * m + k] as usize;
                *gi = grid[k];
            }
            g
        })
        .collect()
}

fn dp_search(u: &TransformedPayoff, w: &DistortionFn, s: f64, n: usize, grid: &[f64]) -> (f64, Vec<f64>) {
    let weights = cell_weights(w, n);
    let us: Vec<f64> = grid.iter().map(|&x| u.eval_raw(x)).collect();
    let budget = |g: &[f64]| g.iter().sum::<f64>() / n as f64;
    let mut best = project(&vec![s; n], s, u, &weights);
    let consider = |g: Vec<f64>, best: &mut (f64, Vec<f64>)| {
        let cand = project(&g, s, u, &weights);
        if cand.0 > best.0 {
            *best = cand;
        }
    };
    // bracket the multiplier on a log scale
    let mut hi = 1.0;
    let mut g = lagrangian_dp(&us, grid, &weights, hi);
    while budget(&g) > s && hi < 1e300 {
        hi *= 16.0;
        g = lagrangian_dp(&us, grid, &weights, hi);
    }
    consider(g, &mut best);
    let mut lo = hi / 16.0;
    let mut g = lagrangian_dp(&us, grid, &weights, lo);
    while budget(&g) <= s && lo > 1e-300 {
        consider(g, &mut best);
        lo /= 16.0;
        g = lagrangian_dp(&us, grid, &weights, lo);
    }
    consider(g, &mut best);
    let mut over = lagrangian_dp(&us, grid, &weights, lo);
    let mut under = lagrangian_dp(&us, grid, &weights, hi);
    for _ in 0..80 {
        let mid = (lo * hi).sqrt();
        let g = lagrangian_dp(&us, grid, &weights, mid);
        if budget(&g) > s {
            lo = mid;
            over = g.clone();
        } else {
            hi = mid;
            under = g.clone();
        }
        consider(g, &mut best);
        if hi / lo < 1.0 + 1e-12 {
            break;
        }
    }
    // floor-then-suffix candidates across a wide band of multipliers
    let centre = (lo * hi).sqrt();
    for lambda in log_space(centre * 1e-3, centre * 1e1, 97) {
        for g in floor_suffix(&us, grid, &weights, lambda) {
            consider(g, &mut best);
        }
    }
    // the budget can jump across s at the multiplier; splice the two
    // bracketing solutions at every cell
    for (low, high) in [(&under, &over), (&over, &under)] {
        for j in 0..=n {
            let mut g: Vec<f64> = low[..j].iter().chain(&high[j..]).copied().collect();
            for i in 1..n {
                g[i] = g[i].max(g[i - 1]);
            }
            if budget(&g) <= s {
                consider(g, &mut best);
            }
        }
    }
    best
}

/// Coordinate ascent over grid levels from one start, with every trial
/// projected to the budget.
fn ascend(start: Vec<f64>, s: f64, u: &TransformedPayoff, weights: &[f64], grid: &[f64]) -> (f64, Vec<f64>) {
    let (mut best, mut g) = project(&start, s, u, weights);
    for _ in 0..20 {
        let before = best;
        for i in 0..g.len() {
            let lo = if i == 0 { 0.0 } else { g[i - 1] };
            let hi = if i + 1 == g.len() { f64::INFINITY } else { g[i + 1] };
            let cands: Vec<f64> = grid.iter().copied().filter(|&x| x >= lo && x <= hi).collect();
            let stride = (cands.len() / 32).max(1);
            for &c in cands.iter().step_by(stride) {
                // neighbors move when an accepted trial is rescaled
                if (i > 0 && c < g[i - 1]) || (i + 1 < g.len() && c > g[i + 1]) {
                    continue;
                }
                let old = g[i];
                g[i] = c;
                let (v, p) = project(&g, s, u, weights);
                if v > best {
                    best = v;
                    g = p;
                } else {
                    g[i] = old;
                }
            }
        }
        if best <= before * (1.0 + 1e-12) {
            break;
        }
    }
    (best, g)
}

fn ascent_search(
    u: &TransformedPayoff,
    w: &DistortionFn,
    s: f64,
    n: usize,
    grid: &[f64],
    opts: &OracleOptions,
) -> (f64, Vec<f64>) {
    let weights = cell_weights(w, n);
    let results: Vec<(f64, Vec<f64>)> = (0..opts.starts.max(1))
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(k as u64);
            let mut start: Vec<f64> = (0..n).map(|_| grid[rng.random_range(0..grid.len())]).collect();
            start.sort_by(f64::total_cmp);
            ascend(start, s, u, &weights, grid)
        })
        .collect();
    // fixed-order reduction
    results
        .into_iter()
        .fold((f64::NEG_INFINITY, Vec::new()), |acc, r| if r.0 > acc.0 { r } else { acc })
}

fn general_search(
    u: &TransformedPayoff,
    w: &DistortionFn,
    s: f64,
    n: usize,
    grid: &[f64],
    opts: &OracleOptions,
) -> (SearchMode, f64, Vec<f64>) {
    if n <= EXHAUSTIVE_MAX_N {
        let (v, g) = dp_search(u, w, s, n, grid);
        (SearchMode::Lagrangian, v, g)
    } else {
        let (v, g) = ascent_search(u, w, s, n, grid, opts);
        (SearchMode::CoordinateAscent, v, g)
    }
}

/// Sorted grid with `s` and the kinks of `u` added.
fn augmented(mut grid: Vec<f64>, u: &TransformedPayoff, s: f64) -> Vec<f64> {
    let (lo, hi) = (grid.iter().copied().fold(f64::INFINITY, f64::min), grid.iter().copied().fold(0.0, f64::max));
    grid.push(s);
    grid.extend(u.kinks().iter().copied().filter(|&k| k > lo && k < hi));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Best step quantile with `n` atoms and budget `s` on the level grid, also
/// compared with the best two-point law. A second pass on a grid widened
/// by `1e3` flags suspected unbounded values.
pub fn brute_force_quantile(
    u: &TransformedPayoff,
    w: &DistortionFn,
    s: f64,
    n: usize,
    level_grid: &[f64],
    opts: &OracleOptions,
) -> Result<OracleReport> {
    if !(s > 0.0) || n == 0 || level_grid.len() < 2 {
        return Err(Error::InvalidInput("oracle needs s > 0, n >= 1 and at least two levels".into()));
    }
    let grid = augmented(level_grid.to_vec(), u, s);
    let two = brute_force_two_level(u, w, s, &grid);
    let (mode, mut value, mut atoms) = general_search(u, w, s, n, &grid, opts);
    if mode == SearchMode::Lagrangian {
        // second pass on a denser grid spanning the incumbent's levels
        let (g_lo, g_hi) = (grid[0], *grid.last().unwrap());
        let lo = (atoms[0] / 1.5).max(g_lo);
        let hi = (atoms[n - 1] * 1.5).min(g_hi);
        let mut fine = log_space(lo, hi.max(lo * 1.01), 4 * grid.len());
        fine.extend(grid.iter().copied().filter(|&x| x < lo || x > hi));
        let fine = augmented(fine, u, s);
        let (v, g) = dp_search(u, w, s, n, &fine);
        if v > value {
            value = v;
            atoms = g;
        }
    }

    let top = *grid.last().unwrap();
    let mut wide = grid.clone();
    wide.extend(log_space(top * 1.5, top * 1e3, grid.len().max(20) / 2));
    let wide_two = brute_force_two_level(u, w, s, &wide).value;
    let (_, wide_value, _) = general_search(u, w, s, n, &wide, opts);
    let base = value.max(two.value);
    let unbounded_suspected = wide_value.max(wide_two) > base + 0.01 * base.abs().max(1e-12);

    let mut report = if two.value > value {
        two
    } else {
        let budget = atoms.iter().sum::<f64>() / n as f64;
        OracleReport {
            mode,
            n,
            value,
            levels: atoms,
            mass_low: None,
            budget,
            unbounded_suspected: false,
        }
    };
    report.unbounded_suspected = unbounded_suspected;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Step CDFs in rational arithmetic

/// `F = sum_{i<k} c_i 1[a_i, a_{i+1}) + 1[a_k, inf)` with
/// `0 < a_1 < ... < a_k` and `0 < c_1 <= ... <= c_{k-1} <= 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StepCdf {
    pub points: Vec<BigRational>,
    pub levels: Vec<BigRational>,
}

fn rat(v: i64) -> BigRational {
    BigRational::from_integer(v.into())
}

impl StepCdf {
    pub fn new(points: Vec<BigRational>, levels: Vec<BigRational>) -> Result<Self> {
        if points.is_empty() || levels.len() + 1 != points.len() {
            return Err(Error::InvalidInput("step CDF needs one level per point except the last".into()));
        }
        if !points[0].is_positive() || points.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidInput("jump points must be positive and strictly increasing".into()));
        }
        if levels.iter().any(|c| !c.is_positive() || *c > rat(1)) || levels.windows(2).any(|c| c[1] < c[0]) {
            return Err(Error::InvalidInput("levels must be nondecreasing in (0, 1]".into()));
        }
        Ok(Self { points, levels }.canonical())
    }

    /// Drops jump points where the CDF does not jump.
    fn canonical(self) -> Self {
        let k = self.points.len();
        let mut points = vec![self.points[0].clone()];
        let mut levels = Vec::new();
        let mut prev = self.levels.first().cloned().unwrap_or_else(|| rat(1));
        for i in 1..k {
            let next = self.levels.get(i).cloned().unwrap_or_else(|| rat(1));
            if next != prev {
                levels.push(prev.clone());
                points.push(self.points[i].clone());
            }
            prev = next;
        }
        // levels now has one entry fewer than points unless the last level was already 1
        if levels.len() == points.len() {
            levels.pop();
        }
        Self { points, levels }
    }

    /// Number of jump points.
    pub fn jumps(&self) -> usize {
        self.points.len()
    }

    /// `F(y)`.
    pub fn eval(&self, y: &BigRational) -> BigRational {
        let k = self.points.partition_point(|p| p <= y);
        match k {
            0 => BigRational::zero(),
            k if k == self.points.len() => BigRational::one(),
            k => self.levels[k - 1].clone(),
        }
    }

    /// `int_0^inf (1 - F)`.
    pub fn mean(&self) -> BigRational {
        let mut m = self.points[0].clone();
        for (i, c) in self.levels.iter().enumerate() {
            m += (rat(1) - c) * (&self.points[i + 1] - &self.points[i]);
        }
        m
    }

    pub fn to_f64(&self) -> Result<Cdf> {
        let pts: Vec<f64> = self.points.iter().map(|p| p.to_f64().unwrap_or(f64::NAN)).collect();
        let lv: Vec<f64> = self.levels.iter().map(|c| c.to_f64().unwrap_or(f64::NAN)).collect();
        Cdf::steps(&pts, &lv)
    }

    /// `J_D(F) = u(a_1) + sum_i w(1 - c_i) (u(a_{i+1}) - u(a_i))` for a
    /// payoff given in closed form.
    pub fn choquet<U: Fn(f64) -> f64>(&self, u: U, w: &DistortionFn) -> f64 {
        let a: Vec<f64> = self.points.iter().map(|p| p.to_f64().unwrap()).collect();
        let mut v = u(a[0]);
        for (i, c) in self.levels.iter().enumerate() {
            v += w.eval(1.0 - c.to_f64().unwrap()) * (u(a[i + 1]) - u(a[i]));
        }
        v
    }

    /// The function `F` restricted to the union of its own and `other`'s
    /// jump points, for exact pointwise comparison of mixtures.
    fn values_on(&self, grid: &[BigRational]) -> Vec<BigRational> {
        grid.iter().map(|y| self.eval(y)).collect()
    }
}

/// Checks `F = sum theta_k F_k` exactly at every jump point of every CDF.
pub fn reconstructs(f: &StepCdf, parts: &[(StepCdf, BigRational)]) -> bool {
    let mut grid: Vec<BigRational> = f.points.clone();
    for (p, _) in parts {
        grid.extend(p.points.iter().cloned());
    }
    grid.sort();
    grid.dedup();
    // F is right-continuous and piecewise constant: matching at every jump
    // point and below the first one suffices
    let mut probe = grid.clone();
    probe.push(&grid[0] / rat(2));
    let target = f.values_on(&probe);
    let mut sum = vec![BigRational::zero(); probe.len()];
    for (p, theta) in parts {
        for (acc, v) in sum.iter_mut().zip(p.values_on(&probe)) {
            *acc += theta * v;
        }
    }
    let total: BigRational = parts.iter().map(|(_, t)| t.clone()).sum();
    total == rat(1) && sum == target
}

/// Splits a CDF with three jumps into two CDFs with at most two jumps and
/// the same mean: `F = theta F1 + (1 - theta) F2`.
pub fn decompose_three_step(f: &StepCdf) -> Result<(StepCdf, StepCdf, BigRational)> {
    if f.jumps() < 3 {
        return Ok((f.clone(), f.clone(), rat(1)));
    }
    if f.jumps() > 3 {
        return Err(Error::InvalidInput(format!("expected at most 3 jump points, got {}", f.jumps())));
    }
    let (a1, a2, a3) = (&f.points[0], &f.points[1], &f.points[2]);
    let (c1, c2) = (&f.levels[0], &f.levels[1]);
    let s0 = f.mean();
    if &s0 == a1 || &s0 == a3 {
        return Ok((f.clone(), f.clone(), rat(1)));
    }
    let one = rat(1);
    let b1 = (a3 - &s0) / (a3 - a1);
    if &s0 > a2 {
        let b2 = (a3 - &s0) / (a3 - a2);
        let f1 = StepCdf::new(vec![a1.clone(), a3.clone()], vec![b1.clone()])?;
        let f2 = StepCdf::new(vec![a2.clone(), a3.clone()], vec![b2])?;
        Ok((f1, f2, c1 / b1))
    } else {
        let b2 = (a2 - &s0) / (a2 - a1);
        let f1 = StepCdf::new(vec![a1.clone(), a3.clone()], vec![b1.clone()])?;
        let f2 = if b2.is_zero() {
            StepCdf::new(vec![a2.clone()], vec![])?
        } else {
            StepCdf::new(vec![a1.clone(), a2.clone()], vec![b2.clone()])?
        };
        let theta1 = (c1 - c2 * &b2) / (&b1 * (&one - &b2));
        let theta2 = (c2 - c1) / (&one - &b2);
        debug_assert_eq!(&theta1 + &theta2, one);
        Ok((f1, f2, theta1))
    }
}

/// One reduction step: a CDF with `k >= 3` jumps as a mixture of two CDFs
/// with `k - 1` jumps and the same mean.
fn split(f: &StepCdf) -> Result<(StepCdf, StepCdf, BigRational)> {
    if f.jumps() == 3 {
        return decompose_three_step(f);
    }
    // F = c3 1[a1, a4) Fbar + tail, with Fbar the first three jumps rescaled
    let c3 = &f.levels[2];
    let fbar = StepCdf::new(
        f.points[..3].to_vec(),
        vec![&f.levels[0] / c3, &f.levels[1] / c3],
    )?;
    let (g1, g2, theta) = decompose_three_step(&fbar)?;
    let lift = |g: &StepCdf| -> Result<StepCdf> {
        // c3 * g on [a1, a4), then F's own levels from a4 on
        let mut points = Vec::new();
        let mut levels = Vec::new();
        for (i, p) in g.points.iter().enumerate() {
            points.push(p.clone());
            levels.push(c3 * g.levels.get(i).cloned().unwrap_or_else(|| rat(1)));
        }
        for i in 3..f.points.len() {
            points.push(f.points[i].clone());
            levels.push(f.levels.get(i).cloned().unwrap_or_else(|| rat(1)));
        }
        levels.pop();
        StepCdf::new(points, levels)
    };
    Ok((lift(&g1)?, lift(&g2)?, theta))
}

/// Mixture of CDFs with at most two jumps, each with `F`'s mean, whose
/// weights sum to one. Identical components are merged.
pub fn decompose_n_step(f: &StepCdf) -> Result<Vec<(StepCdf, BigRational)>> {
    let mut out: Vec<(StepCdf, BigRational)> = Vec::new();
    let mut stack = vec![(f.clone(), rat(1))];
    while let Some((g, weight)) = stack.pop() {
        if weight.is_zero() {
            continue;
        }
        if g.jumps() <= 2 {
            match out.iter_mut().find(|(h, _)| *h == g) {
                Some((_, w)) => *w += weight,
                None => out.push((g, weight)),
            }
            continue;
        }
        let (g1, g2, theta) = split(&g)?;
        let rest = rat(1) - &theta;
        stack.push((g2, &weight * rest));
        stack.push((g1, weight * theta));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{transform_payoff, PayoffFn};

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn cdf(points: &[(i64, i64)], levels: &[(i64, i64)]) -> StepCdf {
        StepCdf::new(
            points.iter().map(|&(n, d)| q(n, d)).collect(),
            levels.iter().map(|&(n, d)| q(n, d)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn three_step_upper_branch_by_hand() {
        let f = cdf(&[(1, 1), (2, 1), (4, 1)], &[(3, 10), (6, 10)]);
        assert_eq!(f.mean(), q(5, 2));
        let (f1, f2, theta) = decompose_three_step(&f).unwrap();
        assert_eq!(f1, cdf(&[(1, 1), (4, 1)], &[(1, 2)]));
        assert_eq!(f2, cdf(&[(2, 1), (4, 1)], &[(3, 4)]));
        assert_eq!(theta, q(3, 5));
        assert_eq!(f1.mean(), q(5, 2));
        assert_eq!(f2.mean(), q(5, 2));
        let parts = vec![(f1, theta.clone()), (f2, q(1, 1) - theta)];
        assert!(reconstructs(&f, &parts));
    }

    #[test]
    fn three_step_lower_branch() {
        let f = cdf(&[(1, 1), (2, 1), (4, 1)], &[(1, 2), (4, 5)]);
        assert_eq!(f.mean(), q(19, 10));
        let (f1, f2, theta) = decompose_three_step(&f).unwrap();
        // b1 = (4 - 1.9) / 3, b2 = (2 - 1.9) / 1
        assert_eq!(f1, cdf(&[(1, 1), (4, 1)], &[(7, 10)]));
        assert_eq!(f2, cdf(&[(1, 1), (2, 1)], &[(1, 10)]));
        let theta2 = (q(4, 5) - q(1, 2)) / (q(1, 1) - q(1, 10));
        assert_eq!(&theta + &theta2, q(1, 1));
        assert!(reconstructs(&f, &[(f1, theta), (f2, theta2)]));
    }

    #[test]
    fn two_step_is_its_own_decomposition() {
        let f = cdf(&[(1, 1), (3, 1)], &[(1, 2)]);
        let (f1, f2, theta) = decompose_three_step(&f).unwrap();
        assert_eq!((f1.clone(), f2, theta), (f.clone(), f.clone(), q(1, 1)));
        assert_eq!(decompose_n_step(&f).unwrap(), vec![(f, q(1, 1))]);
    }

    #[test]
    fn five_step_decomposes_exactly() {
        let f = cdf(
            &[(1, 2), (1, 1), (3, 2), (5, 2), (7, 1)],
            &[(1, 10), (1, 4), (1, 2), (9, 10)],
        );
        let parts = decompose_n_step(&f).unwrap();
        assert!(parts.len() > 1);
        assert!(reconstructs(&f, &parts));
        for (p, _) in &parts {
            assert!(p.jumps() <= 2);
            assert_eq!(p.mean(), f.mean());
        }
    }

    #[test]
    fn canonical_form_merges_flat_steps() {
        let f = cdf(&[(1, 1), (2, 1), (3, 1)], &[(1, 2), (1, 2)]);
        assert_eq!(f.jumps(), 2);
        let g = cdf(&[(1, 1), (2, 1)], &[(1, 1)]);
        assert_eq!(g.jumps(), 1);
    }

    #[test]
    fn linear_payoff_identity_weights_give_the_budget() {
        // u(x) = x: gamma / beta = 1
        let u = transform_payoff(&PayoffFn::Power { gamma: 0.5 }, 0.5).unwrap();
        let g = StepQuantile {
            atoms: vec![0.2, 0.5, 1.0, 2.3],
        };
        let v = g.value(&u, &DistortionFn::Identity);
        assert!((v - 2.0 * g.budget()).abs() < 1e-12);
    }

    #[test]
    fn dp_reaches_stop_now_for_concave_convex() {
        let u = transform_payoff(&PayoffFn::Power { gamma: 0.5 }, 1.0).unwrap();
        let w = DistortionFn::Power { alpha: 2.0 };
        let opts = OracleOptions::default();
        let rep = brute_force_quantile(&u, &w, 1.0, 50, &opts.level_grid(1.0), &opts).unwrap();
        assert!((rep.value - 2.0).abs() < 1e-9, "{rep:?}");
        assert!(!rep.unbounded_suspected);
    }

    #[test]
    fn ascent_matches_dp_on_a_small_instance() {
        let u = transform_payoff(&PayoffFn::Power { gamma: 0.5 }, 1.0).unwrap();
        let w = DistortionFn::Power { alpha: 0.75 };
        let opts = OracleOptions {
            starts: 4,
            ..OracleOptions::default()
        };
        let grid = opts.level_grid(1.0);
        let (dp, _) = dp_search(&u, &w, 1.0, 40, &grid);
        let (ca, g) = ascent_search(&u, &w, 1.0, 40, &grid, &opts);
        assert!(ca <= dp * (1.0 + 1e-9));
        assert!(ca > 0.97 * dp, "{ca} vs {dp}");
        assert!(g.windows(2).all(|p| p[0] <= p[1]));
    }
}
