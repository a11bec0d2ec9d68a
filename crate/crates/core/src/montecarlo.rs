//! Monte Carlo simulation of the martingale state `S = P^beta` and of
//! stopping rules applied to it.
//!
//! Log-increments are drawn exactly,
//! `ln S(t + dt) = ln S(t) - (beta sigma)^2 dt / 2 + beta sigma sqrt(dt) Z`,
//! so the only discretization error is that triggers are monitored on the
//! time grid. Path `i` draws from its own ChaCha stream keyed by
//! `(seed, i)`, which makes every report independent of the thread count.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{Barycenter, RuleKind, StoppingRule};
use crate::error::{Error, Result};
use crate::model::{DistortionFn, MarketParams, TransformedPayoff};
use crate::quantile::Cdf;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "DISTORT_STOP_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub n_paths: usize,
    /// Time step, in the calendar time of the price process.
    pub dt: f64,
    /// Paths still running at `t_cap` are stopped there and flagged.
    pub t_cap: f64,
    pub seed: u64,
    /// Pair path `2k + 1` with the mirrored normals of path `2k`.
    pub antithetic: bool,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            dt: 1e-4,
            t_cap: 50.0,
            seed: 0x5eed,
            antithetic: false,
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidInput("n_paths must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dt",
                value: self.dt,
                reason: "must be positive and finite",
            });
        }
        if !(self.t_cap > 0.0 && self.t_cap.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "t_cap",
                value: self.t_cap,
                reason: "must be positive and finite",
            });
        }
        Ok(())
    }

    fn n_steps(&self, horizon: f64) -> usize {
        (horizon / self.dt).ceil().max(1.0) as usize
    }

    /// Generator and sign of the normals for path `index`.
    fn stream(&self, index: usize) -> (ChaCha8Rng, f64) {
        let (key, sign) = if self.antithetic {
            (index / 2, if index % 2 == 1 { -1.0 } else { 1.0 })
        } else {
            (index, 1.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(key as u64);
        (rng, sign)
    }
}

/// Log-space dynamics of `S`.
#[derive(Debug, Clone, Copy)]
struct Dynamics {
    x0: f64,
    drift: f64,
    sd: f64,
}

impl Dynamics {
    fn new(market: &MarketParams, dt: f64) -> Result<Self> {
        market.validate()?;
        let beta = market.beta();
        if beta == 0.0 {
            return Err(Error::InvalidInput(
                "beta = 0: the transformed state is constant, simulate the price directly".into(),
            ));
        }
        let v = beta * market.sigma;
        Ok(Self {
            x0: market.s().ln(),
            drift: -0.5 * v * v * dt,
            sd: v.abs() * dt.sqrt(),
        })
    }

    #[inline]
    fn step(&self, x: f64, rng: &mut ChaCha8Rng, sign: f64) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        x + self.drift + self.sd * sign * z
    }
}

/// Runs `f` on a pool sized by [`THREADS_ENV`], or on the global pool.
fn with_pool<T: Send, F: FnOnce() -> T + Send>(f: F) -> T {
    let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok());
    match threads {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

/// Grid path `S(0), S(dt), ..., S(n dt)` of path `index` up to `horizon`.
pub fn simulate_path(market: &MarketParams, cfg: &PathConfig, index: usize, horizon: f64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let dynamics = Dynamics::new(market, cfg.dt)?;
    let (mut rng, sign) = cfg.stream(index);
    let n = cfg.n_steps(horizon);
    let mut x = dynamics.x0;
    let mut out = Vec::with_capacity(n + 1);
    out.push(x.exp());
    for _ in 0..n {
        x = dynamics.step(x, &mut rng, sign);
        out.push(x.exp());
    }
    Ok(out)
}

/// Lazy stream of `cfg.n_paths` grid paths.
pub fn simulate_paths<'a>(
    market: &'a MarketParams,
    cfg: &'a PathConfig,
    horizon: f64,
) -> impl Iterator<Item = Result<Vec<f64>>> + 'a {
    (0..cfg.n_paths).map(move |i| simulate_path(market, cfg, i, horizon))
}

/// `S(horizon)` on every path, stepping on the grid.
pub fn terminal_states(market: &MarketParams, cfg: &PathConfig, horizon: f64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let dynamics = Dynamics::new(market, cfg.dt)?;
    let n = cfg.n_steps(horizon);
    Ok(with_pool(|| {
        (0..cfg.n_paths)
            .into_par_iter()
            .map(|i| {
                let (mut rng, sign) = cfg.stream(i);
                let mut x = dynamics.x0;
                for _ in 0..n {
                    x = dynamics.step(x, &mut rng, sign);
                }
                x.exp()
            })
            .collect()
    }))
}

/// Outcome of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub path: usize,
    pub stop_time: f64,
    /// `S` at the stopping time, or at `t_cap` when capped.
    pub value: f64,
    pub capped: bool,
    /// Which side of an exit interval was crossed: `-1` lower, `1` upper.
    #[serde(skip)]
    pub side: i8,
}

impl Sample {
    /// The price at the same time, `S^(1/beta)`.
    pub fn price(&self, beta: f64) -> f64 {
        self.value.powf(1.0 / beta)
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

/// Exit frequencies of an interval rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitFrequencies {
    pub lower: f64,
    pub upper: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub rule: String,
    pub config: PathConfig,
    pub s: f64,
    #[serde(skip)]
    pub samples: Vec<Sample>,
    pub n_stopped: usize,
    pub capped_fraction: f64,
    /// Mean of `S` at `min(tau, t_cap)` over all paths.
    pub mean_stopped: Estimate,
    /// Mean terminal state of the capped paths.
    pub mean_capped: Option<f64>,
    pub mean_stop_time: Option<Estimate>,
    pub exit_frequencies: Option<ExitFrequencies>,
    /// Kolmogorov–Smirnov distance of the stopped (uncapped) samples to the
    /// target law.
    pub ks_to_target: Option<f64>,
    pub choquet_estimate: Option<f64>,
    /// Standard deviation of one log-increment; sets the width of the bands
    /// excluded around atoms in the KS statistic.
    pub log_step_sd: f64,
    pub notes: Vec<String>,
}

/// Mean and standard error; with antithetic pairs the error comes from the
/// pair averages.
fn estimate(values: &[f64], antithetic: bool) -> Estimate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let units: Vec<f64> = if antithetic && n >= 4 {
        values.chunks(2).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
    } else {
        values.to_vec()
    };
    let m = units.len();
    if m < 2 {
        return Estimate { mean, se: 0.0 };
    }
    let um = units.iter().sum::<f64>() / m as f64;
    let var = units.iter().map(|v| (v - um).powi(2)).sum::<f64>() / (m - 1) as f64;
    Estimate {
        mean,
        se: (var / m as f64).sqrt(),
    }
}

/// Trigger evaluated on the log state.
enum Trigger<'a> {
    Below(f64),
    Above(f64),
    Outside(f64, f64),
    Drawdown(f64),
    Azema(&'a Barycenter),
}

fn simulate_rule(trigger: &Trigger, dynamics: &Dynamics, cfg: &PathConfig, index: usize) -> Sample {
    let (mut rng, sign) = cfg.stream(index);
    let n = cfg.n_steps(cfg.t_cap);
    let mut x = dynamics.x0;
    let mut max = x;
    let mut level = match trigger {
        Trigger::Azema(psi) => psi.stop_level(max.exp()).ln(),
        _ => f64::NEG_INFINITY,
    };
    for k in 1..=n {
        x = dynamics.step(x, &mut rng, sign);
        let (hit, side) = match *trigger {
            Trigger::Below(l) => (x <= l, -1),
            Trigger::Above(h) => (x >= h, 1),
            Trigger::Outside(l, h) => {
                if x <= l {
                    (true, -1)
                } else {
                    (x >= h, 1)
                }
            }
            Trigger::Drawdown(ln_eta) => {
                max = max.max(x);
                (x <= max + ln_eta, 0)
            }
            Trigger::Azema(psi) => {
                if x > max {
                    max = x;
                    level = psi.stop_level(max.exp()).ln();
                }
                (x <= level, 0)
            }
        };
        if hit {
            return Sample {
                path: index,
                stop_time: k as f64 * cfg.dt,
                value: x.exp(),
                capped: false,
                side,
            };
        }
    }
    Sample {
        path: index,
        stop_time: n as f64 * cfg.dt,
        value: x.exp(),
        capped: true,
        side: 0,
    }
}

/// Exact draw of `S(t_cap)` for rules that never stop.
fn terminal_draw(dynamics: &Dynamics, cfg: &PathConfig, index: usize) -> Sample {
    let (mut rng, sign) = cfg.stream(index);
    let steps = cfg.n_steps(cfg.t_cap) as f64;
    let z: f64 = rng.sample(StandardNormal);
    let x = dynamics.x0 + dynamics.drift * steps + dynamics.sd * steps.sqrt() * sign * z;
    Sample {
        path: index,
        stop_time: steps * cfg.dt,
        value: x.exp(),
        capped: true,
        side: 0,
    }
}

fn rule_name(kind: &RuleKind) -> String {
    match kind {
        RuleKind::StopNow => "stop_now".into(),
        RuleKind::HoldForever => "hold_forever".into(),
        RuleKind::HitLevel { level } => format!("hit_level({level})"),
        RuleKind::ExitInterval { a, b } => format!("exit_interval({a}, {b})"),
        RuleKind::DrawdownFraction { eta } => format!("drawdown_fraction({eta})"),
        RuleKind::Barycenter(_) => "barycenter".into(),
    }
}

/// Applies `rule` to `cfg.n_paths` simulated paths of `S`.
pub fn run_rule(rule: &StoppingRule, market: &MarketParams, cfg: &PathConfig) -> Result<SimReport> {
    cfg.validate()?;
    let dynamics = Dynamics::new(market, cfg.dt)?;
    let s = market.s();
    rule.validate(s)?;
    let mut notes = Vec::new();
    let trigger = match &rule.kind {
        RuleKind::StopNow => None,
        RuleKind::HoldForever => None,
        RuleKind::HitLevel { level } if *level == s => None,
        RuleKind::HitLevel { level } if *level < s => Some(Trigger::Below(level.ln())),
        RuleKind::HitLevel { level } => Some(Trigger::Above(level.ln())),
        RuleKind::ExitInterval { a, b } if a == b => None,
        RuleKind::ExitInterval { a, b } => Some(Trigger::Outside(a.ln(), b.ln())),
        RuleKind::DrawdownFraction { eta } => Some(Trigger::Drawdown(eta.ln())),
        RuleKind::Barycenter(psi) => Some(Trigger::Azema(psi)),
    };
    let samples: Vec<Sample> = match (&rule.kind, &trigger) {
        (RuleKind::HoldForever, _) => {
            notes.push("rule never stops: terminal statistics at t_cap only".into());
            with_pool(|| {
                (0..cfg.n_paths)
                    .into_par_iter()
                    .map(|i| terminal_draw(&dynamics, cfg, i))
                    .collect()
            })
        }
        (_, None) => (0..cfg.n_paths)
            .map(|i| Sample {
                path: i,
                stop_time: 0.0,
                value: s,
                capped: false,
                side: 0,
            })
            .collect(),
        (_, Some(t)) => with_pool(|| {
            (0..cfg.n_paths)
                .into_par_iter()
                .map(|i| simulate_rule(t, &dynamics, cfg, i))
                .collect()
        }),
    };
    let n = samples.len();
    let values: Vec<f64> = samples.iter().map(|x| x.value).collect();
    let n_capped = samples.iter().filter(|x| x.capped).count();
    let stopped_times: Vec<f64> = samples.iter().filter(|x| !x.capped).map(|x| x.stop_time).collect();
    let capped_values: Vec<f64> = samples.iter().filter(|x| x.capped).map(|x| x.value).collect();
    let exit_frequencies = match rule.kind {
        RuleKind::ExitInterval { a, b } if a < b => {
            let lower = samples.iter().filter(|x| x.side < 0).count() as f64 / n as f64;
            let upper = samples.iter().filter(|x| x.side > 0).count() as f64 / n as f64;
            Some(ExitFrequencies {
                lower,
                upper,
                se: (lower * (1.0 - lower) / n as f64).sqrt(),
            })
        }
        _ => None,
    };
    if n_capped > 0 && !matches!(rule.kind, RuleKind::HoldForever) {
        notes.push(format!("{n_capped} path(s) reached t_cap unstopped"));
    }
    Ok(SimReport {
        rule: rule_name(&rule.kind),
        config: *cfg,
        s,
        n_stopped: n - n_capped,
        capped_fraction: n_capped as f64 / n as f64,
        mean_stopped: estimate(&values, cfg.antithetic),
        mean_capped: if capped_values.is_empty() {
            None
        } else {
            Some(capped_values.iter().sum::<f64>() / capped_values.len() as f64)
        },
        mean_stop_time: if stopped_times.is_empty() {
            None
        } else {
            Some(estimate(&stopped_times, false))
        },
        exit_frequencies,
        ks_to_target: None,
        choquet_estimate: None,
        log_step_sd: dynamics.sd,
        samples,
        notes,
    })
}

impl SimReport {
    /// Values of the paths that stopped before `t_cap`, sorted.
    pub fn stopped_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.samples.iter().filter(|x| !x.capped).map(|x| x.value).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Sets `ks_to_target`, excluding log-bands of four step deviations
    /// around the atoms of `target`.
    pub fn compare(&mut self, target: &Cdf) -> Option<f64> {
        let xs = self.stopped_values();
        if xs.is_empty() {
            return None;
        }
        let band = (4.0 * self.log_step_sd).max(1e-12);
        let ks = ks_distance(&xs, target, band);
        self.ks_to_target = Some(ks);
        Some(ks)
    }

    /// Sets `choquet_estimate` from the stopped samples.
    pub fn choquet(&mut self, u: &TransformedPayoff, w: &DistortionFn) -> Option<f64> {
        let xs = self.stopped_values();
        if xs.is_empty() {
            return None;
        }
        let v = mc_choquet(&xs, u, w);
        self.choquet_estimate = Some(v);
        Some(v)
    }

    /// `path_id,stop_time,stopped_value,capped_flag` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "path_id,stop_time,stopped_value,capped_flag")?;
        for x in &self.samples {
            writeln!(out, "{},{:.10e},{:.17e},{}", x.path, x.stop_time, x.value, u8::from(x.capped))?;
        }
        Ok(())
    }
}

/// Atoms of a CDF: knots where it jumps.
fn atoms(target: &Cdf) -> Vec<f64> {
    target
        .knots()
        .iter()
        .copied()
        .filter(|&y| y.is_finite() && y > 0.0 && target.eval(y) - target.left_limit(y) > 1e-12)
        .collect()
}

/// `sup |F_n - F|` over points outside the log-bands `|ln x - ln a| <= band`
/// around atoms `a` of `target`. With `band = 0` this is the usual KS
/// statistic. `sorted` must be sorted ascending.
pub fn ks_distance(sorted: &[f64], target: &Cdf, band: f64) -> f64 {
    let n = sorted.len() as f64;
    let atoms = atoms(target);
    let in_band = |x: f64| band > 0.0 && atoms.iter().any(|&a| (x.ln() - a.ln()).abs() <= band);
    // empirical CDF at y and just below y
    let ecdf = |y: f64| sorted.partition_point(|&v| v <= y) as f64 / n;
    let ecdf_left = |y: f64| sorted.partition_point(|&v| v < y) as f64 / n;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == x {
            j += 1;
        }
        if !in_band(x) {
            let f = target.eval(x);
            let fl = target.left_limit(x);
            d = d.max((j as f64 / n - f).abs()).max((i as f64 / n - fl).abs());
        }
        i = j;
    }
    for &a in &atoms {
        if band > 0.0 {
            let (lo, hi) = (a * (-band).exp(), a * band.exp());
            d = d.max((ecdf_left(lo) - target.left_limit(lo)).abs());
            d = d.max((ecdf(hi) - target.eval(hi)).abs());
        } else {
            d = d.max((ecdf(a) - target.eval(a)).abs());
            d = d.max((ecdf_left(a) - target.left_limit(a)).abs());
        }
    }
    d
}

/// Choquet value of the empirical law of `samples`:
/// `sum_i u(x_(i)) [w(1 - (i-1)/n) - w(1 - i/n)]` with the unnormalized payoff.
pub fn mc_choquet(samples: &[f64], u: &TransformedPayoff, w: &DistortionFn) -> f64 {
    assert!(!samples.is_empty(), "mc_choquet needs at least one sample");
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    if matches!(w, DistortionFn::Identity) {
        return xs.iter().map(|&x| u.eval_raw(x)).sum::<f64>() / n;
    }
    let mut total = 0.0;
    let mut upper = w.eval(1.0);
    for (i, &x) in xs.iter().enumerate() {
        let lower = w.eval(1.0 - (i + 1) as f64 / n);
        total += u.eval_raw(x) * (upper - lower);
        upper = lower;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{transform_payoff, PayoffFn};

    fn unit_market() -> MarketParams {
        MarketParams::new(0.0, 1.0, 1.0).unwrap()
    }

    fn cfg(n_paths: usize, dt: f64) -> PathConfig {
        PathConfig {
            n_paths,
            dt,
            t_cap: 50.0,
            seed: 7,
            antithetic: false,
        }
    }

    #[test]
    fn stop_now_is_a_point_mass() {
        let mut rep = run_rule(&StoppingRule::stop_now(), &unit_market(), &cfg(100, 0.01)).unwrap();
        assert_eq!(rep.capped_fraction, 0.0);
        assert_eq!(rep.mean_stopped.mean, 1.0);
        assert_eq!(rep.compare(&Cdf::point_mass(1.0)), Some(0.0));
    }

    #[test]
    fn hold_forever_is_all_capped() {
        let rule = StoppingRule::optimal(RuleKind::HoldForever);
        let rep = run_rule(&rule, &unit_market(), &cfg(1000, 0.01)).unwrap();
        assert_eq!(rep.capped_fraction, 1.0);
        assert_eq!(rep.n_stopped, 0);
        assert!(rep.mean_capped.is_some());
    }

    #[test]
    fn paths_are_reproducible_in_isolation() {
        let m = unit_market();
        let c = cfg(10, 0.01);
        let all: Vec<Vec<f64>> = simulate_paths(&m, &c, 1.0).map(|p| p.unwrap()).collect();
        let third = simulate_path(&m, &c, 3, 1.0).unwrap();
        assert_eq!(all[3], third);
        let ends = terminal_states(&m, &c, 1.0).unwrap();
        assert_eq!(ends[3], *third.last().unwrap());
    }

    #[test]
    fn antithetic_pairs_mirror_normals() {
        let m = unit_market();
        let c = PathConfig { antithetic: true, ..cfg(2, 0.5) };
        let a = simulate_path(&m, &c, 0, 0.5).unwrap();
        let b = simulate_path(&m, &c, 1, 0.5).unwrap();
        // ln a + ln b = 2 (ln s + drift)
        assert!((a[1].ln() + b[1].ln() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn identity_choquet_is_sample_mean() {
        let u = transform_payoff(&PayoffFn::Power { gamma: 0.5 }, 1.0).unwrap();
        let xs = [0.3, 1.7, 2.2, 0.9];
        let direct = xs.iter().map(|x| 2.0 * f64::sqrt(*x)).sum::<f64>() / 4.0;
        assert_eq!(mc_choquet(&xs, &u, &DistortionFn::Identity), direct);
    }

    #[test]
    fn choquet_of_constant_samples() {
        let u = transform_payoff(&PayoffFn::Power { gamma: 0.5 }, 1.0).unwrap();
        let v = mc_choquet(&[4.0; 17], &u, &DistortionFn::Power { alpha: 0.3 });
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ks_of_exact_quantiles() {
        let target = Cdf::pareto(0.5, 2.0);
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| 0.5 / (1.0 - (i as f64 + 0.5) / n as f64).sqrt()).collect();
        let d = ks_distance(&xs, &target, 0.0);
        assert!((d - 0.5 / n as f64).abs() < 1e-9, "{d}");
    }

    #[test]
    fn banded_ks_ignores_overshoot_near_atoms() {
        let target = Cdf::steps(&[1.0, 3.0], &[0.5]).unwrap();
        let xs = [0.999, 0.998, 3.001, 3.002];
        assert!(ks_distance(&xs, &target, 0.0) >= 0.5);
        assert!(ks_distance(&xs, &target, 0.01) < 1e-12);
    }
}
