//! Configuration-driven front end.
//!
//! A run is described by one JSON file (`RunConfig`). Every subcommand reads
//! it, does its work and writes its reports into the output directory:
//!
//! | command     | files                                              |
//! |-------------|----------------------------------------------------|
//! | `solve`     | `solution.json`, `gstar.csv`, `fstar.csv`, `psi.csv` |
//! | `simulate`  | `sim_report.json`, `stopped_samples.csv`           |
//! | `oracle`    | `oracle.json`                                      |
//! | `decompose` | `decomposition.json`                               |
//!
//! Exit status is 0 on success (flagged infinite or unattained values
//! included), 2 on user error or an unsupported regime, 3 on an internal
//! numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num::{BigInt, BigRational, One, Zero};
use serde::{Deserialize, Serialize};

use crate::embedding::{self, Barycenter, RuleKind, StoppingRule};
use crate::error::Error;
use crate::montecarlo::{run_rule, PathConfig, SimReport};
use crate::numerics::log_space;
use crate::oracle::{self, OracleOptions, OracleReport, StepCdf};
use crate::quantile::Cdf;
use crate::solver::{self, Case, Diagnostics, ProblemSpec, Solution, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "distort-stop", version, about = "Optimal stopping of GBM under probability distortion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the configured problem.
    Solve(CommonArgs),
    /// Simulate the configured rule, or the solver's rule.
    Simulate(CommonArgs),
    /// Run the brute-force oracle on the configured problem.
    Oracle(CommonArgs),
    /// Decompose a step distribution function read from CSV.
    Decompose(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub paths: Option<usize>,
    #[arg(long, value_name = "X")]
    pub dt: Option<f64>,
}

/// Simulation block of a run file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub paths: PathConfig,
    /// Explicit rule; when absent the solver's rule is simulated.
    pub rule: Option<StoppingRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeConfig {
    /// CSV with header `point,level`; relative paths resolve against the
    /// config file's directory.
    pub input: PathBuf,
}

/// Contents of a run file. Only `problem` is needed by `solve` and
/// `oracle`; `decompose` needs only `decompose`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub problem: Option<ProblemSpec>,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub oracle: OracleOptions,
    #[serde(default)]
    pub decompose: Option<DecomposeConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Directory of the file the config came from.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Failure of a command, carrying its exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Internal(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Solver(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => EXIT_USER,
            CliError::Internal(_) | CliError::Io { .. } => EXIT_INTERNAL,
            CliError::Solver(e) => match e {
                Error::Quadrature { .. } | Error::NoMultiplier(_) | Error::NonConvergence { .. } => EXIT_INTERNAL,
                _ => EXIT_USER,
            },
        }
    }

    /// Short machine-readable tag.
    pub fn reason(&self) -> &'static str {
        match self {
            CliError::User(_) => "user_error",
            CliError::Internal(_) => "internal",
            CliError::Io { .. } => "io",
            CliError::Solver(e) => match e {
                Error::InvalidParameter { .. } => "invalid_parameter",
                Error::InvalidInput(_) => "invalid_input",
                Error::ShapeMismatch { .. } => "shape_mismatch",
                Error::UnsupportedRegime { .. } => "unsupported_regime",
                Error::Quadrature { .. } => "quadrature",
                Error::NoMultiplier(_) => "no_multiplier",
                Error::Infeasible(_) => "infeasible",
                Error::NonConvergence { .. } => "non_convergence",
                Error::MeanMismatch { .. } => "mean_mismatch",
                Error::InvalidRule(_) => "invalid_rule",
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

/// Parses and validates a run file.
pub fn parse_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::User(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = parse_config_str(&text)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

pub fn parse_config_str(text: &str) -> CliResult<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        CliError::User(format!("config error at `{}`: {}", e.path(), e.inner()))
    })?;
    if let Some(p) = &cfg.problem {
        p.validate()?;
    }
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, args: &CommonArgs) {
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.simulate.paths.seed = seed;
        cfg.oracle.seed = seed;
    }
    if let Some(n) = args.paths {
        cfg.simulate.paths.n_paths = n;
    }
    if let Some(dt) = args.dt {
        cfg.simulate.paths.dt = dt;
    }
}

fn require_problem(cfg: &RunConfig) -> CliResult<&ProblemSpec> {
    cfg.problem
        .as_ref()
        .ok_or_else(|| CliError::User("config has no `problem` section".into()))
}

fn create_file(dir: &Path, name: &str) -> CliResult<BufWriter<fs::File>> {
    let path = dir.join(name);
    let f = fs::File::create(&path).map_err(io_err(format!("cannot create {}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<()> {
    let mut out = create_file(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Internal(e.to_string()))?;
    writeln!(out).map_err(io_err(name))?;
    out.flush().map_err(io_err(name))
}

fn prepare_out(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(io_err(format!("cannot create {}", dir.display())))?;
    Ok(dir)
}

/// `solution.json` contents.
#[derive(Debug, Clone, Serialize)]
pub struct SolutionSummary {
    pub case: Case,
    pub value: Value,
    pub attained: bool,
    /// Initial state in the martingale scale `S = P^beta`.
    pub s: f64,
    pub beta: f64,
    pub a_star: Option<f64>,
    pub b_star: Option<f64>,
    pub lambda_star: Option<f64>,
    pub eta: Option<f64>,
    pub c_bar_star: Option<f64>,
    /// Thresholds expressed as prices `P = S^(1/beta)`.
    pub a_star_price: Option<f64>,
    pub b_star_price: Option<f64>,
    pub rule: RuleSummary,
    pub diagnostics: Diagnostics,
}

/// The rule without its tabulated data; non-finite levels become `None`.
#[derive(Debug, Clone, Serialize)]
pub struct RuleSummary {
    pub kind: &'static str,
    pub attainment: embedding::Attainment,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub level: Option<f64>,
    pub eta: Option<f64>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl RuleSummary {
    pub fn of(rule: &StoppingRule) -> Self {
        let mut r = Self {
            kind: "",
            attainment: rule.attainment,
            a: None,
            b: None,
            level: None,
            eta: None,
        };
        r.kind = match &rule.kind {
            RuleKind::StopNow => "stop_now",
            RuleKind::HoldForever => "hold_forever",
            RuleKind::HitLevel { level } => {
                r.level = finite(*level);
                "hit_level"
            }
            RuleKind::ExitInterval { a, b } => {
                r.a = finite(*a);
                r.b = finite(*b);
                "exit_interval"
            }
            RuleKind::DrawdownFraction { eta } => {
                r.eta = Some(*eta);
                "drawdown_fraction"
            }
            RuleKind::Barycenter(psi) => {
                r.a = finite(psi.lower);
                r.b = finite(psi.upper);
                "barycenter"
            }
        };
        r
    }
}

impl SolutionSummary {
    pub fn new(sol: &Solution, beta: f64) -> Self {
        let d = &sol.diagnostics;
        let price = |x: Option<f64>| x.and_then(|x| finite(x.powf(1.0 / beta)));
        let a = d.a.and_then(finite);
        let b = d.b.and_then(finite);
        let eta = d.eta.or(match sol.rule.kind {
            RuleKind::DrawdownFraction { eta } => Some(eta),
            _ => None,
        });
        Self {
            case: sol.case,
            value: sol.value,
            attained: sol.value.is_attained(),
            s: sol.s,
            beta,
            a_star: a,
            b_star: b,
            lambda_star: d.lambda,
            eta,
            c_bar_star: d.c_bar,
            a_star_price: price(a),
            b_star_price: price(b),
            rule: RuleSummary::of(&sol.rule),
            diagnostics: d.clone(),
        }
    }
}

/// Quantile plotting grid: uniform cells plus points approaching 1.
fn quantile_grid() -> Vec<f64> {
    let n = 1000;
    let mut xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    xs.extend((4..=8).map(|k| 1.0 - 10f64.powi(-k)));
    xs
}

fn cdf_grid(f: &Cdf, s: f64) -> Vec<f64> {
    let lo = f.support_min();
    let hi = f.support_max();
    let lo = if lo > 0.0 { lo * 0.5 } else { s * 1e-3 };
    let hi = if hi.is_finite() { hi * 1.5 } else { s * 1e3 };
    log_space(lo, hi.max(lo * 2.0), 1000)
}

/// Barycenter to plot: the rule's own, or one built from the target law.
fn psi_for(sol: &Solution) -> Option<Barycenter> {
    match &sol.rule.kind {
        RuleKind::Barycenter(psi) => Some(psi.clone()),
        RuleKind::DrawdownFraction { .. } => sol.f_star.as_ref().and_then(|f| embedding::barycenter(f, sol.s).ok()),
        _ => None,
    }
}

pub fn cmd_solve(cfg: &RunConfig) -> CliResult<Solution> {
    let spec = require_problem(cfg)?;
    let sol = solver::solve(spec)?;
    let dir = prepare_out(cfg)?;
    write_json(&dir, "solution.json", &SolutionSummary::new(&sol, spec.market.beta()))?;
    if let Some(g) = &sol.g_star {
        let mut out = create_file(&dir, "gstar.csv")?;
        g.write_csv(&mut out, &quantile_grid()).map_err(io_err("gstar.csv"))?;
        out.flush().map_err(io_err("gstar.csv"))?;
    }
    if let Some(f) = &sol.f_star {
        let mut out = create_file(&dir, "fstar.csv")?;
        f.write_csv(&mut out, &cdf_grid(f, sol.s)).map_err(io_err("fstar.csv"))?;
        out.flush().map_err(io_err("fstar.csv"))?;
    }
    if let Some(psi) = psi_for(&sol) {
        let mut out = create_file(&dir, "psi.csv")?;
        psi.write_csv(&mut out, &psi.default_grid(512)).map_err(io_err("psi.csv"))?;
        out.flush().map_err(io_err("psi.csv"))?;
    }
    Ok(sol)
}

/// Law a rule produces when it is known in closed form.
fn law_of_rule(rule: &StoppingRule, s: f64) -> Option<Cdf> {
    match rule.kind {
        RuleKind::StopNow => Some(Cdf::point_mass(s)),
        RuleKind::ExitInterval { a, b } if a > 0.0 && b.is_finite() => {
            embedding::exit_rule(a, b, s).ok().map(|(_, law)| law.cdf())
        }
        RuleKind::DrawdownFraction { eta } if eta < 1.0 => Some(Cdf::pareto(eta * s, 1.0 / (1.0 - eta))),
        RuleKind::DrawdownFraction { .. } => Some(Cdf::point_mass(s)),
        _ => None,
    }
}

pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<SimReport> {
    let spec = require_problem(cfg)?;
    let s = spec.s();
    let (rule, target) = match &cfg.simulate.rule {
        Some(rule) => (rule.clone(), law_of_rule(rule, s)),
        None => {
            let sol = solver::solve(spec)?;
            let target = sol.f_star.clone().or_else(|| law_of_rule(&sol.rule, s));
            (sol.rule, target)
        }
    };
    let mut report = run_rule(&rule, &spec.market, &cfg.simulate.paths)?;
    if let Some(f) = &target {
        report.compare(f);
    }
    if !spec.market.is_degenerate() {
        if let Ok(u) = spec.transformed() {
            report.choquet(&u, &spec.distortion);
        }
    }
    let dir = prepare_out(cfg)?;
    write_json(&dir, "sim_report.json", &report)?;
    let mut out = create_file(&dir, "stopped_samples.csv")?;
    report.write_csv(&mut out).map_err(io_err("stopped_samples.csv"))?;
    out.flush().map_err(io_err("stopped_samples.csv"))?;
    Ok(report)
}

pub fn cmd_oracle(cfg: &RunConfig) -> CliResult<OracleReport> {
    let spec = require_problem(cfg)?;
    let u = spec.transformed()?;
    let s = spec.s();
    let opts = &cfg.oracle;
    let report = oracle::brute_force_quantile(&u, &spec.distortion, s, opts.n, &opts.level_grid(s), opts)?;
    let dir = prepare_out(cfg)?;
    write_json(&dir, "oracle.json", &report)?;
    Ok(report)
}

/// Parses `p/q`, an integer or a decimal (optionally with exponent) exactly.
pub fn parse_rational(text: &str) -> Option<BigRational> {
    let t = text.trim();
    if let Some((p, q)) = t.split_once('/') {
        let p: BigInt = p.trim().parse().ok()?;
        let q: BigInt = q.trim().parse().ok()?;
        return (!q.is_zero()).then(|| BigRational::new(p, q));
    }
    let (mantissa, exp) = match t.find(['e', 'E']) {
        Some(i) => (&t[..i], t[i + 1..].parse::<i32>().ok()?),
        None => (t, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let all: BigInt = format!("0{int}{frac}").parse().ok()?;
    let scale = exp - frac.len() as i32;
    let ten = BigInt::from(10);
    let mut r = BigRational::from_integer(all);
    if scale >= 0 {
        r *= BigRational::from_integer(num::pow(ten, scale as usize));
    } else {
        r /= BigRational::from_integer(num::pow(ten, (-scale) as usize));
    }
    Some(if neg { -r } else { r })
}

/// Reads `point,level` rows. `level` is `F` on `[point, next point)`; the
/// last row's level must be 1 (or left empty).
pub fn read_step_cdf(text: &str) -> CliResult<StepCdf> {
    let mut points = Vec::new();
    let mut levels = Vec::new();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim().eq_ignore_ascii_case("point,level") => {}
        _ => return Err(CliError::User("step CDF CSV must start with the header `point,level`".into())),
    }
    for (i, line) in lines {
        let bad = |what: &str| CliError::User(format!("line {}: {what}: `{line}`", i + 1));
        let (p, l) = line.split_once(',').ok_or_else(|| bad("expected two columns"))?;
        points.push(parse_rational(p).ok_or_else(|| bad("cannot parse point"))?);
        levels.push(if l.trim().is_empty() {
            BigRational::one()
        } else {
            parse_rational(l).ok_or_else(|| bad("cannot parse level"))?
        });
    }
    match levels.pop() {
        Some(last) if last.is_one() => {}
        Some(_) => return Err(CliError::User("the last level must be 1".into())),
        None => return Err(CliError::User("step CDF CSV has no rows".into())),
    }
    Ok(StepCdf::new(points, levels)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepCdfText {
    pub points: Vec<String>,
    pub levels: Vec<String>,
}

impl StepCdfText {
    pub fn of(f: &StepCdf) -> Self {
        Self {
            points: f.points.iter().map(ToString::to_string).collect(),
            levels: f.levels.iter().map(ToString::to_string).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Component {
    pub weight: String,
    pub cdf: StepCdfText,
    pub mean: String,
}

/// `decomposition.json` contents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub input: StepCdfText,
    pub mean: String,
    pub components: Vec<Component>,
    /// The weighted components sum to the input exactly.
    pub exact: bool,
    /// Every component has the input's mean.
    pub means_preserved: bool,
}

pub fn decompose_report(f: &StepCdf) -> CliResult<DecompositionReport> {
    let parts = oracle::decompose_n_step(f)?;
    let mean = f.mean();
    let exact = oracle::reconstructs(f, &parts);
    let means_preserved = parts.iter().all(|(g, _)| g.mean() == mean);
    Ok(DecompositionReport {
        input: StepCdfText::of(f),
        mean: mean.to_string(),
        components: parts
            .iter()
            .map(|(g, wt)| Component {
                weight: wt.to_string(),
                cdf: StepCdfText::of(g),
                mean: g.mean().to_string(),
            })
            .collect(),
        exact,
        means_preserved,
    })
}

pub fn cmd_decompose(cfg: &RunConfig) -> CliResult<DecompositionReport> {
    let dc = cfg
        .decompose
        .as_ref()
        .ok_or_else(|| CliError::User("config has no `decompose` section".into()))?;
    let path = cfg.base_dir.join(&dc.input);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::User(format!("cannot read {}: {e}", path.display())))?;
    let report = decompose_report(&read_step_cdf(&text)?)?;
    if !report.exact {
        return Err(CliError::Internal("decomposition does not reconstruct the input".into()));
    }
    let dir = prepare_out(cfg)?;
    write_json(&dir, "decomposition.json", &report)?;
    Ok(report)
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'static str,
    message: String,
    exit_code: i32,
    /// First few grid points where shape verification failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    violations: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    violation_count: Option<usize>,
}

fn execute(cli: &Cli) -> CliResult<String> {
    let args = match &cli.command {
        Command::Solve(a) | Command::Simulate(a) | Command::Oracle(a) | Command::Decompose(a) => a,
    };
    let mut cfg = parse_config(&args.config)?;
    apply_overrides(&mut cfg, args);
    match &cli.command {
        Command::Solve(_) => {
            let sol = cmd_solve(&cfg)?;
            Ok(format!("{}: {:?}", sol.case.label(), sol.value))
        }
        Command::Simulate(_) => {
            let r = cmd_simulate(&cfg)?;
            Ok(format!(
                "{}: mean stopped {:.6} (se {:.2e}), capped {:.4}, ks {:?}",
                r.rule, r.mean_stopped.mean, r.mean_stopped.se, r.capped_fraction, r.ks_to_target
            ))
        }
        Command::Oracle(_) => {
            let r = cmd_oracle(&cfg)?;
            Ok(format!("{:?} n = {}: value {:.9}", r.mode, r.n, r.value))
        }
        Command::Decompose(_) => {
            let r = cmd_decompose(&cfg)?;
            Ok(format!("{} component(s), exact = {}", r.components.len(), r.exact))
        }
    }
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(msg) => {
            println!("{msg}");
            EXIT_OK
        }
        Err(e) => {
            let code = e.exit_code();
            let violations = match &e {
                CliError::Solver(Error::ShapeMismatch { violations, .. }) => Some(violations.as_slice()),
                _ => None,
            };
            let violation_count = violations.map(<[f64]>::len);
            let violations = violations.map(|v| &v[..v.len().min(20)]);
            let report = ErrorReport {
                error: e.reason(),
                message: e.to_string(),
                exit_code: code,
                violations,
                violation_count,
            };
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| e.to_string()));
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(p: i64, d: i64) -> BigRational {
        BigRational::new(p.into(), d.into())
    }

    #[test]
    fn parses_rationals_exactly() {
        assert_eq!(parse_rational("3/10"), Some(q(3, 10)));
        assert_eq!(parse_rational("0.3"), Some(q(3, 10)));
        assert_eq!(parse_rational("-1.25"), Some(q(-5, 4)));
        assert_eq!(parse_rational("2.5e-1"), Some(q(1, 4)));
        assert_eq!(parse_rational("4"), Some(q(4, 1)));
        assert_eq!(parse_rational(".5"), Some(q(1, 2)));
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("abc"), None);
        assert_eq!(parse_rational("."), None);
    }

    #[test]
    fn reads_step_cdf_csv() {
        let f = read_step_cdf("point,level\n1,0.3\n2,3/5\n4,1\n").unwrap();
        assert_eq!(f.levels, vec![q(3, 10), q(3, 5)]);
        assert!(read_step_cdf("point,level\n1,0.3\n2,0.9\n").is_err());
        assert!(read_step_cdf("x,y\n1,1\n").is_err());
        assert!(read_step_cdf("point,level\n2,0.5\n1,\n").is_err());
    }

    #[test]
    fn minimal_config_is_valid() {
        let cfg = parse_config_str(
            r#"{"problem": {"market": {"mu": 0.01, "sigma": 0.2, "p0": 1.2},
                "payoff": {"kind": "power", "gamma": 0.5},
                "distortion": {"kind": "power", "alpha": 0.75}}}"#,
        )
        .unwrap();
        let p = cfg.problem.unwrap();
        // beta = 1/2 gives u(x) = 2x, which counts as concave
        assert!((p.market.beta() - 0.5).abs() < 1e-12);
        assert_eq!(p.transformed().unwrap().shape(), crate::model::Shape::Concave);
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
        assert_eq!(cfg.simulate.paths, PathConfig::default());
    }

    #[test]
    fn rejects_bad_configs() {
        let zero_sigma = r#"{"problem": {"market": {"mu": 0, "sigma": 0, "p0": 1},
            "payoff": {"kind": "log"}, "distortion": {"kind": "identity"}}}"#;
        let e = parse_config_str(zero_sigma).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_USER);
        assert!(e.to_string().contains("sigma"));

        let unknown = r#"{"problem": {"market": {"mu": 0, "sigma": 1, "p0": 1},
            "payoff": {"kind": "log"}, "distortion": {"kind": "prelec"}}}"#;
        let msg = parse_config_str(unknown).unwrap_err().to_string();
        assert!(msg.contains("problem.distortion"), "{msg}");
        assert!(msg.contains("reverse_s_quadratic"), "{msg}");

        let extra = r#"{"simulate": {"n_paths": 10, "steps": 3}}"#;
        assert!(parse_config_str(extra).unwrap_err().to_string().contains("steps"));
        assert!(parse_config_str(r#"{"outdir": "x"}"#).is_err());
    }

    #[test]
    fn rule_summary_drops_infinite_levels() {
        let r = RuleSummary::of(&StoppingRule::optimal(RuleKind::ExitInterval { a: 1.0, b: f64::INFINITY }));
        assert_eq!((r.kind, r.a, r.b), ("exit_interval", Some(1.0), None));
    }

    #[test]
    fn closed_form_laws_have_mean_s() {
        for kind in [
            RuleKind::StopNow,
            RuleKind::ExitInterval { a: 0.5, b: 4.0 },
            RuleKind::DrawdownFraction { eta: 0.4 },
        ] {
            let f = law_of_rule(&StoppingRule::optimal(kind), 2.0).unwrap();
            assert!((f.mean() - 2.0).abs() < 1e-9);
        }
    }
}
