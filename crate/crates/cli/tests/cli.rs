use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use nde_cli::commands::{check, mnc, read_solution_csv, solve, sweep, verify};
use nde_cli::config::PRESETS;
use nde_cli::{exit, RunConfig};
use tempfile::TempDir;

fn preset(name: &str) -> RunConfig {
    RunConfig::preset(name).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn nde(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_nde")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into(), String::from_utf8_lossy(&out.stderr).into())
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_series(dir: &Path, name: &str, range: std::ops::RangeInclusive<usize>, x: impl Fn(usize) -> f64) -> PathBuf {
    let path = dir.join(name);
    let mut text = String::from("n,x\n");
    for n in range {
        text.push_str(&format!("{n},{:?}\n", x(n)));
    }
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn check_first_example() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, stdout, _) = nde(&["--config", "example1", "--out", out, "check"]);
    assert_eq!(code, 0, "{stdout}");
    let report = json(dir.path().join("report.json"));
    for key in ["gamma_plus_ok", "z2_ok", "z22_ok", "z3_ok", "add_series_ok", "constants_ok", "selfmap_ok"] {
        assert_eq!(report[key], true, "{key}");
    }
    assert_eq!(report["gamma_plus"], 1.0);
    assert_eq!(report["P"], 0.5);
    assert_eq!(report["M_star"], 32.0);
    let contraction = json(dir.path().join("contraction.json"));
    assert_eq!(contraction["valid"], true);
    assert_eq!(contraction["n4"], 8);
}

#[test]
fn check_rejects_growing_exponents() {
    let dir = TempDir::new().unwrap();
    let cfg = fixture("gamma_violation.toml");
    let (code, stdout, _) = nde(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "check"]);
    assert_eq!(code, i32::from(exit::FAILED));
    assert!(stdout.contains("gamma_plus_ok"));
    assert_eq!(json(dir.path().join("report.json"))["gamma_plus_ok"], false);
    assert!(!dir.path().join("contraction.json").exists());
}

#[test]
fn check_sturm_liouville_has_no_beta_remainder() {
    let dir = TempDir::new().unwrap();
    let (outcome, report, _) = check(&preset("sturm-liouville"), dir.path()).unwrap();
    assert!(outcome.ok);
    assert!(report.beta_rem.iter().all(|b| b.value == 0.0));
}

#[test]
fn config_errors_exit_with_four() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, PRESETS[0].1.replace("\"x^3\"", "\"x^^3\"")).unwrap();
    let (code, _, stderr) = nde(&["--config", bad.to_str().unwrap(), "check"]);
    assert_eq!(code, i32::from(exit::CONFIG));
    assert!(stderr.contains("equation.f") && stderr.contains("column 3"), "{stderr}");
    let (code, _, _) = nde(&["--config", "no-such-preset", "check"]);
    assert_eq!(code, i32::from(exit::CONFIG));
}

#[test]
fn solve_zero_preset() {
    let dir = TempDir::new().unwrap();
    let (_, x, stats) = solve(&preset("zero"), dir.path(), None).unwrap();
    assert!(x.values.iter().all(|v| *v == 0.0));
    assert_eq!(stats.max_residual, 0.0);
    let text = fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    assert!(text.starts_with("n,x,residual\n0,0.0,\n1,0.0,0.0\n"), "{text}");
}

#[test]
fn solve_first_example() {
    let dir = TempDir::new().unwrap();
    let (code, _, _) = nde(&["--config", "example1", "--out", dir.path().to_str().unwrap(), "solve"]);
    assert_eq!(code, 0);
    let stats = json(dir.path().join("stats.json"));
    assert!(stats["final_delta"].as_f64().unwrap() < 1e-12);
    assert!(stats["max_residual"].as_f64().unwrap() < 1e-9);
    assert_eq!(stats["backward_extension"], "ok");
    let x = read_solution_csv(&dir.path().join("solution.csv")).unwrap();
    assert_eq!((x.start, x.end()), (0, 200));
}

#[test]
fn runs_are_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for dir in [&a, &b] {
        let out = dir.path().to_str().unwrap();
        assert_eq!(nde(&["--config", "example1", "--out", out, "solve", "--initial", "-2"]).0, 0);
        assert_eq!(nde(&["--config", "example1", "--out", out, "mnc", "--seed", "9"]).0, 0);
    }
    for file in ["solution.csv", "stats.json", "darbo.csv", "contraction.json"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
}

#[test]
fn solve_reports_skipped_backward_extension() {
    let dir = TempDir::new().unwrap();
    let (_, x, stats) = solve(&preset("example2"), dir.path(), Some(1.0)).unwrap();
    assert!(stats.backward_extension.starts_with("skipped"));
    assert_eq!(x.residual_start, stats.operator_start);
    assert!(stats.max_residual < 1e-9);
}

#[test]
fn verify_alternating_data() {
    let dir = TempDir::new().unwrap();
    let input = write_series(dir.path(), "alt.csv", 0..=52, |n| if n % 2 == 0 { 1.0 } else { -1.0 });
    let (code, stdout, _) =
        nde(&["--config", "example1", "--out", dir.path().to_str().unwrap(), "verify", "--input", input.to_str().unwrap(), "--threshold", "1e-10"]);
    assert_eq!(code, 0, "{stdout}");
    let text = fs::read_to_string(dir.path().join("verified.csv")).unwrap();
    assert!(text.starts_with("n,x,residual,relative,hazard\n"));
    assert_eq!(text.lines().count(), 54);
}

#[test]
fn verify_quadratic_data_relative() {
    let dir = TempDir::new().unwrap();
    let input = write_series(dir.path(), "quad.csv", 2..=32, |n| (n * (n - 1)) as f64);
    let (outcome, summary) = verify(&preset("example2"), &input, dir.path(), 1e-8, true).unwrap();
    assert!(outcome.ok, "{}", outcome.summary);
    assert_eq!(summary.checked + summary.excluded.len(), 28);
    assert!(summary.relative && summary.max < 1e-8);
}

#[test]
fn verify_localizes_a_perturbation() {
    let dir = TempDir::new().unwrap();
    let input = write_series(dir.path(), "p.csv", 0..=40, |n| {
        if n == 20 {
            1.1
        } else if n % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    });
    let (outcome, _) = verify(&preset("example1"), &input, dir.path(), 1e-9, false).unwrap();
    assert!(!outcome.ok);
    let mut rdr = csv::Reader::from_path(dir.path().join("verified.csv")).unwrap();
    for row in rdr.records() {
        let row = row.unwrap();
        let n: usize = row[0].parse().unwrap();
        if let Ok(r) = row[2].parse::<f64>() {
            assert_eq!(r.abs() > 1e-9, (18..=22).contains(&n), "n = {n}");
        }
    }
}

#[test]
fn verify_rejects_gaps() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("gap.csv");
    fs::write(&input, "n,x\n0,1\n1,1\n3,1\n4,1\n5,1\n").unwrap();
    let (code, _, stderr) = nde(&["--config", "example1", "--out", dir.path().to_str().unwrap(), "verify", "--input", input.to_str().unwrap()]);
    assert_eq!(code, i32::from(exit::IO));
    assert!(stderr.contains("contiguous"), "{stderr}");
}

#[test]
fn sweep_linear_family() {
    let dir = TempDir::new().unwrap();
    let (code, stdout, _) = nde(&["--config", "family-linear", "--out", dir.path().to_str().unwrap(), "sweep"]);
    assert_eq!(code, 0, "{stdout}");
    let mut rdr = csv::Reader::from_path(dir.path().join("pairwise.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["s", "t", "x_diff", "u_diff", "bound", "ok"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 55);
    assert!(rows.iter().all(|r| &r[5] == "true"));
    for m in 0..=10 {
        assert!(dir.path().join(format!("member_{m}.csv")).exists());
    }
    let family = json(dir.path().join("family.json"));
    assert!(family["theta1"].as_f64().unwrap() < 1.0);
    assert!(family["growth"]["ok"].as_bool().unwrap());
}

fn family_with(params: &str, u0: &str, g: &str) -> RunConfig {
    let text = PRESETS.iter().find(|(n, _)| *n == "family-linear").unwrap().1;
    let text = text
        .replace("params = \"1/m\"", &format!("params = \"{params}\""))
        .replace("u0 = \"0\"", &format!("u0 = \"{u0}\""))
        .replace("g = \"x\"", &format!("g = \"{g}\""));
    RunConfig::parse(&text.replace("members = 10", "members = 3"), "family").unwrap()
}

#[test]
fn sweep_constant_family() {
    let dir = TempDir::new().unwrap();
    let (_, report, _) = sweep(&family_with("0.5", "0.5", "x"), dir.path(), 1).unwrap();
    assert!(report.pairwise.iter().all(|p| p.x_diff == 0.0));
}

#[test]
fn sweep_vanishing_g() {
    let dir = TempDir::new().unwrap();
    sweep(&family_with("1/m", "0", "0*x"), dir.path(), 1).unwrap();
    let first = fs::read(dir.path().join("member_0.csv")).unwrap();
    for m in 1..=3 {
        assert_eq!(fs::read(dir.path().join(format!("member_{m}.csv"))).unwrap(), first);
    }
}

#[test]
fn sweep_needs_a_family() {
    let (code, _, stderr) = nde(&["--config", "example1", "--out", TempDir::new().unwrap().path().to_str().unwrap(), "sweep"]);
    assert_eq!(code, i32::from(exit::CONFIG));
    assert!(stderr.contains("[family]"));
}

#[test]
fn mnc_writes_trials() {
    let dir = TempDir::new().unwrap();
    let mut cfg = preset("sturm-liouville");
    cfg.analysis.trials = 10;
    let (outcome, trials) = mnc(&cfg, dir.path(), 4).unwrap();
    assert!(outcome.ok);
    assert_eq!(trials.len(), 10);
    let text = fs::read_to_string(dir.path().join("darbo.csv")).unwrap();
    assert!(text.starts_with("trial,mu_before,mu_after,ratio,ok\n"));
    assert_eq!(text.lines().count(), 11);
}
