use std::path::Path;
use std::process::Command;

use serde_json::Value as Json;

const BIN: &str = env!("CARGO_BIN_EXE_distort-stop");

const UNIT_MARKET: &str = r#""market": {"mu": 0.0, "sigma": 1.0, "p0": 1.0}"#;

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn problem(payoff: &str, distortion: &str) -> String {
    format!(r#"{{"problem": {{{UNIT_MARKET}, "payoff": {payoff}, "distortion": {distortion}}}}}"#)
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> (i32, String) {
    let o = Command::new(BIN)
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn read_json(path: &Path) -> Json {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_reverse_s_example_emits_c_bar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &problem(r#"{"kind": "power", "gamma": 0.3}"#, r#"{"kind": "reverse_s_quadratic"}"#),
    );
    let out = dir.path().join("out");
    let (code, err) = run("solve", &cfg, &out, &[]);
    assert_eq!(code, 0, "{err}");
    let sol = read_json(&out.join("solution.json"));
    let c_bar = sol["c_bar_star"].as_f64().unwrap();
    assert!((c_bar - 0.70).abs() <= 0.01, "{c_bar}");
    assert_eq!(sol["rule"]["kind"], "barycenter");
    for f in ["gstar.csv", "fstar.csv", "psi.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let header = std::fs::read_to_string(out.join("psi.csv")).unwrap();
    assert!(header.starts_with("x,psi\n"));
}

#[test]
fn solve_concave_convex_stops_now() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &problem(r#"{"kind": "log"}"#, r#"{"kind": "power", "alpha": 2.0}"#),
    );
    let out = dir.path().join("out");
    assert_eq!(run("solve", &cfg, &out, &[]).0, 0);
    let sol = read_json(&out.join("solution.json"));
    assert_eq!(sol["rule"]["kind"], "stop_now");
    let v = sol["value"]["value"].as_f64().unwrap();
    assert!((v - 2f64.ln()).abs() < 1e-8);
}

#[test]
fn solve_equal_exponents_reports_infinity_with_success() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &problem(r#"{"kind": "power", "gamma": 0.5}"#, r#"{"kind": "power", "alpha": 0.5}"#),
    );
    let out = dir.path().join("out");
    assert_eq!(run("solve", &cfg, &out, &[]).0, 0);
    let sol = read_json(&out.join("solution.json"));
    assert_eq!(sol["value"]["kind"], "infinite");
    assert!(sol["diagnostics"]["sequence"].is_string());
}

#[test]
fn user_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let zero_sigma = r#"{"problem": {"market": {"mu": 0, "sigma": 0, "p0": 1},
        "payoff": {"kind": "log"}, "distortion": {"kind": "identity"}}}"#;
    let (code, err) = run("solve", &write_config(dir.path(), "a.json", zero_sigma), &out, &[]);
    assert_eq!(code, 2);
    assert!(err.contains("sigma"));

    let unknown = problem(r#"{"kind": "log"}"#, r#"{"kind": "prelec", "alpha": 0.6}"#);
    let (code, err) = run("solve", &write_config(dir.path(), "b.json", &unknown), &out, &[]);
    assert_eq!(code, 2);
    assert!(err.contains("expected one of"), "{err}");

    let unsupported = problem(
        r#"{"kind": "piecewise_linear", "knots": [0, 0.5, 1, 2], "values": [0, 0.6, 0.7, 2], "tail_slope": 0.2}"#,
        r#"{"kind": "power", "alpha": 0.75}"#,
    );
    let (code, err) = run("solve", &write_config(dir.path(), "c.json", &unsupported), &out, &[]);
    assert_eq!(code, 2);
    let report: Json = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(report["error"], "unsupported_regime");

    let no_rule = r#"{"output_dir": "x"}"#;
    assert_eq!(run("simulate", &write_config(dir.path(), "d.json", no_rule), &out, &[]).0, 2);
    assert_eq!(run("solve", &dir.path().join("missing.json"), &out, &[]).0, 2);
}

#[test]
fn simulate_exit_interval_hits_both_sides_evenly() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{
        "problem": {"market": {"mu": 0, "sigma": 1, "p0": 2},
                    "payoff": {"kind": "power", "gamma": 0.5}, "distortion": {"kind": "identity"}},
        "simulate": {"rule": {"kind": "exit_interval", "a": 1.0, "b": 3.0, "attainment": "optimal"}}
    }"#;
    let cfg = write_config(dir.path(), "c.json", body);
    let out = dir.path().join("out");
    let (code, err) = run("simulate", &cfg, &out, &["--paths", "4000", "--dt", "1e-5", "--seed", "8"]);
    assert_eq!(code, 0, "{err}");
    let rep = read_json(&out.join("sim_report.json"));
    let f = &rep["exit_frequencies"];
    let (lower, se) = (f["lower"].as_f64().unwrap(), f["se"].as_f64().unwrap());
    assert!((lower - 0.5).abs() < 3.0 * se, "{lower} {se}");
    let csv = std::fs::read_to_string(out.join("stopped_samples.csv")).unwrap();
    assert!(csv.starts_with("path_id,stop_time,stopped_value,capped_flag\n"));
    assert_eq!(csv.lines().count(), 4001);
}

#[test]
fn simulate_stop_now_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &problem(r#"{"kind": "log"}"#, r#"{"kind": "power", "alpha": 2.0}"#),
    );
    let out = dir.path().join("out");
    assert_eq!(run("simulate", &cfg, &out, &["--paths", "10"]).0, 0);
    let rep = read_json(&out.join("sim_report.json"));
    assert_eq!(rep["mean_stopped"]["mean"].as_f64(), Some(1.0));
    assert_eq!(rep["mean_stopped"]["se"].as_f64(), Some(0.0));
    assert_eq!(rep["ks_to_target"].as_f64(), Some(0.0));
}

#[test]
fn solve_then_simulate_reproduces_the_target_law() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &problem(r#"{"kind": "power", "gamma": 0.5}"#, r#"{"kind": "power", "alpha": 0.75}"#),
    );
    let out = dir.path().join("out");
    assert_eq!(run("solve", &cfg, &out, &[]).0, 0);
    let sol = read_json(&out.join("solution.json"));
    assert_eq!(sol["rule"]["kind"], "drawdown_fraction");
    assert_eq!(run("simulate", &cfg, &out, &["--paths", "4000", "--dt", "1e-4"]).0, 0);
    let rep = read_json(&out.join("sim_report.json"));
    let ks = rep["ks_to_target"].as_f64().unwrap();
    // sampling error at 4000 paths plus the grid overshoot
    assert!(ks < 0.05, "{ks}");
}

#[test]
fn outputs_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &problem(r#"{"kind": "power", "gamma": 0.3}"#, r#"{"kind": "reverse_s_quadratic"}"#),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(run("solve", &cfg, out, &[]).0, 0);
        assert_eq!(run("simulate", &cfg, out, &["--paths", "400", "--dt", "1e-3"]).0, 0);
    }
    for f in ["solution.json", "gstar.csv", "fstar.csv", "psi.csv", "sim_report.json", "stopped_samples.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn oracle_at_stop_now_instance_returns_u_of_s() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        r#"{{"problem": {{{UNIT_MARKET}, "payoff": {{"kind": "log"}}, "distortion": {{"kind": "power", "alpha": 2.0}}}},
            "oracle": {{"n": 60, "levels": 80}}}}"#
    );
    let cfg = write_config(dir.path(), "c.json", &body);
    let out = dir.path().join("out");
    assert_eq!(run("oracle", &cfg, &out, &[]).0, 0);
    let rep = read_json(&out.join("oracle.json"));
    let v = rep["value"].as_f64().unwrap();
    assert!((v - 2f64.ln()).abs() < 1e-9, "{v}");
    assert_eq!(rep["unbounded_suspected"], false);
}

#[test]
fn decompose_three_level_example() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("f.csv"), "point,level\n1,3/10\n2,0.6\n4,1\n").unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"decompose": {"input": "f.csv"}}"#);
    let out = dir.path().join("out");
    assert_eq!(run("decompose", &cfg, &out, &[]).0, 0);
    let rep = read_json(&out.join("decomposition.json"));
    assert_eq!(rep["exact"], true);
    assert_eq!(rep["means_preserved"], true);
    let comps = rep["components"].as_array().unwrap();
    assert_eq!(comps.len(), 2);
    assert_eq!(comps[0]["weight"], "3/5");
    assert_eq!(comps[0]["cdf"]["levels"][0], "1/2");
    assert_eq!(comps[1]["cdf"]["levels"][0], "3/4");
}
