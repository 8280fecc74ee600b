//! One function per subcommand. Each writes its artifacts into `out` and
//! returns an [`Outcome`]; the exit status is derived from it.

use std::fs;
use std::path::{Path, PathBuf};

use nde_core::analysis::{contraction_report, darbo_trials, ContractionReport};
use nde_core::equation::{residual_terms, EquationSpec};
use nde_core::fixed_point_solver::{attach_residuals, attach_residuals_from, backward_extend, iterate, SolutionWindow};
use nde_core::hypothesis_checker::{choose_constants, HypothesisReport, Problem};
use nde_core::parameter_dependence::{solve_family, verify_growth, DependenceReport, GrowthCheck};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{exit, CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub ok: bool,
    pub summary: String,
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        if self.ok {
            exit::OK
        } else {
            exit::FAILED
        }
    }
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.into(), source })
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    fs::write(&path, text).map_err(|source| CliError::Io { path, source })
}

fn write_csv<T: Serialize>(path: PathBuf, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let csv_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Csv { path, source }
    };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|source| CliError::Io { path, source })
}

#[derive(Serialize)]
struct SolutionRow {
    n: usize,
    x: f64,
    residual: Option<f64>,
}

fn solution_rows(x: &SolutionWindow) -> impl Iterator<Item = SolutionRow> + '_ {
    (x.start..=x.end()).map(|n| SolutionRow { n, x: x.get(n) + 0.0, residual: x.residual_at(n).map(|r| r + 0.0) })
}

fn prepare(cfg: &RunConfig) -> Result<(EquationSpec, Problem)> {
    let eq = cfg.equation()?;
    let pb = Problem::prepare(&eq, cfg.solver.d, cfg.solver.window, &cfg.tail_options()?)?;
    Ok((eq, pb))
}

/// Writes `report.json`, and `contraction.json` when every hypothesis holds.
pub fn check(cfg: &RunConfig, out: &Path) -> Result<(Outcome, HypothesisReport, Option<ContractionReport>)> {
    create_dir(out)?;
    let eq = cfg.equation()?;
    let tails = cfg.tail_options()?;
    let report = choose_constants(&eq, cfg.solver.d, cfg.solver.window, &tails)?;
    write_json(out.join("report.json"), &report)?;
    let mut contraction = None;
    if report.all_ok() {
        let pb = Problem::prepare(&eq, cfg.solver.d, cfg.solver.window, &tails)?;
        let c = contraction_report(&pb)?;
        write_json(out.join("contraction.json"), &c)?;
        contraction = Some(c);
    }
    let summary = if report.all_ok() {
        format!("all hypotheses hold (gamma+ = {}, P = {}, n_operator = {:?})", report.gamma_plus, report.p_bound, report.n_operator)
    } else {
        format!("failed: {}", report.failures().join(", "))
    };
    Ok((Outcome { ok: report.all_ok(), summary }, report, contraction))
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub final_delta: f64,
    pub per_step_deltas: Vec<f64>,
    pub measured_rate: f64,
    pub tail_budget: f64,
    pub budget_certified: bool,
    pub theta: f64,
    pub n4: Option<usize>,
    pub operator_start: usize,
    /// `"ok"`, or the reason the backward extension was skipped.
    pub backward_extension: String,
    pub residual_start: usize,
    pub max_residual: f64,
    /// Rows flagged by the small-denominator hazard are left out of this maximum.
    pub max_residual_certified: f64,
    pub hazard_rows: Vec<usize>,
}

/// Iterates from the constant `initial` (or the configured one), extends
/// backwards and writes `solution.csv` and `stats.json`.
pub fn solve(cfg: &RunConfig, out: &Path, initial: Option<f64>) -> Result<(Outcome, SolutionWindow, SolveStats)> {
    create_dir(out)?;
    let (eq, pb) = prepare(cfg)?;
    let contraction = contraction_report(&pb)?;
    let start = SolutionWindow::filled(&pb, initial.unwrap_or(cfg.solver.initial));
    let (x, it) = iterate(&pb, &start, cfg.iteration())?;
    let (x, backward_extension) = match backward_extend(&x, &pb) {
        Ok(y) => (attach_residuals(y, &eq)?, "ok".to_string()),
        Err(e) => (attach_residuals_from(x, &eq, pb.operator_start())?, format!("skipped: {e}")),
    };
    let rows: Vec<(usize, f64)> = (x.residual_start..=x.end().saturating_sub(2)).map(|n| (n, x.residual_at(n).unwrap_or(0.0))).collect();
    let hazard_rows: Vec<usize> = rows.iter().filter(|(n, _)| eq.hazard(*n)).map(|(n, _)| *n).collect();
    let max = |skip: bool| rows.iter().filter(|(n, _)| !(skip && eq.hazard(*n))).fold(0.0f64, |m, (_, r)| m.max(r.abs()));
    let stats = SolveStats {
        iterations: it.iterations,
        final_delta: it.final_delta,
        per_step_deltas: it.per_step_deltas,
        measured_rate: it.measured_rate,
        tail_budget: it.tail_budget,
        budget_certified: it.budget_certified,
        theta: contraction.theta,
        n4: contraction.n4,
        operator_start: pb.operator_start(),
        backward_extension,
        residual_start: x.residual_start,
        max_residual: max(false),
        max_residual_certified: max(true),
        hazard_rows,
    };
    write_csv(out.join("solution.csv"), solution_rows(&x))?;
    write_json(out.join("stats.json"), &stats)?;
    let summary = format!(
        "converged in {} iterations (last update {:e}, rate {:.4}), max residual {:e}",
        stats.iterations, stats.final_delta, stats.measured_rate, stats.max_residual_certified
    );
    Ok((Outcome { ok: true, summary }, x, stats))
}

#[derive(Deserialize)]
struct InputRow {
    n: usize,
    x: f64,
}

#[derive(Serialize)]
struct VerifiedRow {
    n: usize,
    x: f64,
    residual: Option<f64>,
    relative: Option<f64>,
    hazard: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifySummary {
    pub rows: usize,
    pub checked: usize,
    pub excluded: Vec<usize>,
    pub max: f64,
    pub mean: f64,
    pub relative: bool,
}

/// Reads an `n,x` table and returns the window it describes.
pub fn read_solution_csv(path: &Path) -> Result<SolutionWindow> {
    let csv_err = |source| CliError::Csv { path: path.into(), source };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut rows = Vec::new();
    for row in rdr.deserialize() {
        let row: InputRow = row.map_err(csv_err)?;
        rows.push(row);
    }
    let first = rows.first().ok_or_else(|| CliError::Input { path: path.into(), message: "no rows".into() })?;
    let start = first.n;
    for (i, row) in rows.iter().enumerate() {
        if row.n != start + i {
            return Err(CliError::Input { path: path.into(), message: format!("expected n = {} but found n = {}; rows must be contiguous", start + i, row.n) });
        }
    }
    Ok(SolutionWindow::new(start, rows.iter().map(|r| r.x).collect(), start))
}

/// Residuals of the data in `input`; writes `verified.csv`.
pub fn verify(cfg: &RunConfig, input: &Path, out: &Path, threshold: f64, relative: bool) -> Result<(Outcome, VerifySummary)> {
    create_dir(out)?;
    let eq = cfg.equation()?;
    let x = read_solution_csv(input)?;
    let from = (x.start + eq.k).max(eq.start);
    if x.end() < from + 2 {
        return Err(CliError::Input { path: input.into(), message: format!("need data through n = {} to check any residual", from + 2) });
    }
    let mut out_rows = Vec::new();
    let (mut max, mut sum, mut checked, mut excluded) = (0.0f64, 0.0, 0, Vec::new());
    for n in x.start..=x.end() {
        let terms = if n >= from && n + 2 <= x.end() { Some(residual_terms(&eq, &x.values, x.start, n)?) } else { None };
        let hazard = eq.hazard(n);
        if let Some(t) = terms {
            if hazard {
                excluded.push(n);
            } else {
                let v = if relative { t.relative() } else { t.value.abs() };
                max = max.max(v);
                sum += v;
                checked += 1;
            }
        }
        out_rows.push(VerifiedRow { n, x: x.get(n), residual: terms.map(|t| t.value), relative: terms.map(|t| t.relative()), hazard });
    }
    write_csv(out.join("verified.csv"), out_rows)?;
    let summary = VerifySummary { rows: x.values.len(), checked, excluded, max, mean: if checked > 0 { sum / checked as f64 } else { 0.0 }, relative };
    let kind = if relative { "relative residual" } else { "residual" };
    let text = format!("{} rows checked, max {kind} {:e}, mean {:e}, {} hazard rows excluded", checked, summary.max, summary.mean, summary.excluded.len());
    Ok((Outcome { ok: summary.max < threshold, summary: text }, summary))
}

#[derive(Serialize)]
struct FamilyFile<'a> {
    growth: &'a GrowthCheck,
    #[serde(flatten)]
    report: &'a DependenceReport,
}

/// Solves the family and writes `growth.json`, `member_<m>.csv`,
/// `pairwise.csv` and `family.json`.
pub fn sweep(cfg: &RunConfig, out: &Path, seed: u64) -> Result<(Outcome, DependenceReport, GrowthCheck)> {
    create_dir(out)?;
    let (spec, opts, section) = cfg.family()?;
    let growth = verify_growth(&spec, section.d1, section.d2, section.growth_samples, seed)?;
    write_json(out.join("growth.json"), &growth)?;
    let run = solve_family(&spec, &cfg.tail_options()?, opts)?;
    for (m, x) in run.solutions.iter().enumerate() {
        write_csv(out.join(format!("member_{m}.csv")), solution_rows(x))?;
    }
    let report = run.report;
    write_csv(out.join("pairwise.csv"), &report.pairwise)?;
    write_json(out.join("family.json"), &FamilyFile { growth: &growth, report: &report })?;
    let bounds_ok = report.pairwise.iter().all(|p| p.ok);
    let summary = format!(
        "theta1 = {:.6}, theta2 = {:.6}, pairwise bounds {}, growth constants {}, limit check {:e}",
        report.theta1,
        report.theta2,
        if bounds_ok { "hold" } else { "violated" },
        if growth.ok { "confirmed" } else { "not confirmed" },
        report.limit_check
    );
    Ok((Outcome { ok: report.valid && bounds_ok && growth.ok, summary }, report, growth))
}

/// Darbo ratio trials on random ensembles; writes `darbo.csv` and `contraction.json`.
pub fn mnc(cfg: &RunConfig, out: &Path, seed: u64) -> Result<(Outcome, Vec<nde_core::analysis::DarboTrial>)> {
    create_dir(out)?;
    let (_, pb) = prepare(cfg)?;
    let contraction = contraction_report(&pb)?;
    write_json(out.join("contraction.json"), &contraction)?;
    let trials = darbo_trials(&pb, &contraction, cfg.analysis.trials, cfg.analysis.members, seed)?;
    write_csv(out.join("darbo.csv"), &trials)?;
    let failed = trials.iter().filter(|t| !t.ok).count();
    let worst = trials.iter().fold(0.0f64, |m, t| m.max(t.ratio));
    let summary = format!("{} trials, {failed} failed, worst ratio {worst:.6} against c1 + c2 = {:.6}", trials.len(), contraction.c1 + contraction.c2);
    Ok((Outcome { ok: failed == 0, summary }, trials))
}
