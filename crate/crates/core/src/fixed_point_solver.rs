//! The fixed-point operator on a finite window, Picard iteration, backward
//! extension and residuals.
//!
//! On the window `[start, N]` the operator is truncated: inner sums run over
//! `i` in `[j, N-1]` and outer sums over `j` in `[n_op, N-1]`. The neglected
//! part is bounded by [`tail_budget`].

use serde::Serialize;

use crate::equation::{residual_terms, EquationSpec, ResidualTerms};
use crate::error::{Error, Result};
use crate::hypothesis_checker::Problem;
use crate::sequence_model::{signed_pow, CompensatedSum};

/// Smallest `|p_n|` the backward extension divides by.
pub const EPS_P: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SolutionWindow {
    pub start: usize,
    pub values: Vec<f64>,
    /// First index at which the operator acts.
    pub n3: usize,
    pub residual_start: usize,
    pub residuals: Option<Vec<f64>>,
}

impl SolutionWindow {
    pub fn new(start: usize, values: Vec<f64>, n3: usize) -> Self {
        SolutionWindow { start, values, n3, residual_start: start, residuals: None }
    }

    /// The constant window `x_n = value` on `[start, end]`.
    pub fn constant(start: usize, end: usize, value: f64, n3: usize) -> Self {
        SolutionWindow::new(start, vec![value; end - start + 1], n3)
    }

    /// A window shaped for `problem`, filled with `value`.
    pub fn filled(problem: &Problem, value: f64) -> Self {
        SolutionWindow::constant(problem.window_start(), problem.window_end(), value, problem.operator_start())
    }

    pub fn end(&self) -> usize {
        self.start + self.values.len() - 1
    }

    pub fn get(&self, n: usize) -> f64 {
        self.values[n - self.start]
    }

    pub fn residual_at(&self, n: usize) -> Option<f64> {
        let r = self.residuals.as_ref()?;
        n.checked_sub(self.residual_start).and_then(|i| r.get(i)).copied()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max_residual(&self) -> Option<f64> {
        self.residuals.as_ref().map(|r| r.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationStats {
    pub iterations: usize,
    pub final_delta: f64,
    pub per_step_deltas: Vec<f64>,
    pub measured_rate: f64,
    pub tail_budget: f64,
    pub budget_certified: bool,
}

/// Geometric mean of consecutive update ratios; 0 once an update vanishes.
pub fn measured_rate(deltas: &[f64]) -> f64 {
    if deltas.len() < 2 || deltas.contains(&0.0) {
        return 0.0;
    }
    let first = deltas[0];
    let last = deltas[deltas.len() - 1];
    (last / first).powf(1.0 / (deltas.len() - 1) as f64)
}

/// Bound on what truncating the operator to the window leaves out:
/// dropped inner tails past `N` plus dropped outer terms from `N` on.
pub fn tail_budget(problem: &Problem) -> f64 {
    let t = &problem.tables;
    let hi = problem.window_end();
    let inner = problem.m_star() * (t.a_rem[t.i(hi)] + t.q_rem[t.i(hi)]);
    let mut acc = CompensatedSum::new();
    if inner > 0.0 {
        for j in problem.operator_start()..hi {
            let i = t.i(j);
            let wl = problem.rem.weight[i] * problem.rem.lambda[i];
            if wl > 0.0 {
                acc.add(wl * inner);
            }
        }
    }
    acc.add(problem.sigma(hi));
    acc.value()
}

/// Running inner and outer sums of the operator, accumulated downwards.
struct Sums<'a> {
    problem: &'a Problem,
    inner: CompensatedSum,
    outer: CompensatedSum,
}

impl<'a> Sums<'a> {
    fn new(problem: &'a Problem) -> Self {
        Sums { problem, inner: CompensatedSum::new(), outer: CompensatedSum::new() }
    }

    /// Adds index `j` and returns `S_j = Σ_{j'>=j} o_{j'}`.
    fn step(&mut self, j: usize, x: &SolutionWindow) -> Result<f64> {
        let pb = self.problem;
        let t = &pb.tables;
        let i = t.i(j);
        let g = t.a[i] * pb.eq.f_at(x.get(j + 1))? + t.q[i] * signed_pow(x.get(j), pb.eq.alpha)?;
        self.inner.add(g);
        let o = signed_pow(self.inner.value() / t.r[i], t.gamma[i].recip())?;
        self.outer.add(o);
        Ok(self.outer.value())
    }
}

fn check_shape(x: &SolutionWindow, problem: &Problem) -> Result<()> {
    if x.start != problem.window_start() {
        return Err(Error::Misaligned { expected: problem.window_start(), found: x.start });
    }
    if x.end() != problem.window_end() {
        return Err(Error::WindowTooShort { needed: problem.window_end(), window_end: x.end() });
    }
    Ok(())
}

/// `(Tx)_n = x_n` below the operator start, `-p_n x_{n-k} - S_n` from it on.
pub fn apply_t(x: &SolutionWindow, problem: &Problem) -> Result<SolutionWindow> {
    check_shape(x, problem)?;
    let (n_op, hi, k) = (problem.operator_start(), problem.window_end(), problem.eq.k);
    let t = &problem.tables;
    let mut y = x.clone();
    y.n3 = n_op;
    y.residuals = None;
    y.values[hi - x.start] = -t.p[t.i(hi)] * x.get(hi - k);
    let mut sums = Sums::new(problem);
    for n in (n_op..hi).rev() {
        let s = sums.step(n, x)?;
        y.values[n - x.start] = -t.p[t.i(n)] * x.get(n - k) - s;
    }
    if y.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("the operator"));
    }
    Ok(y)
}

fn sup_diff(x: &SolutionWindow, y: &SolutionWindow, from: usize) -> f64 {
    (from..=x.end()).fold(0.0f64, |m, n| m.max((x.get(n) - y.get(n)).abs()))
}

#[derive(Clone, Copy, Debug)]
pub struct IterationOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Refuse to run when the truncation budget is not below `tol / 10`.
    pub strict_budget: bool,
}

/// Picard iteration until the sup-norm update on `[n_op, N]` drops below `tol`.
pub fn iterate(problem: &Problem, initial: &SolutionWindow, opts: IterationOptions) -> Result<(SolutionWindow, IterationStats)> {
    check_shape(initial, problem)?;
    for (i, v) in initial.values.iter().enumerate() {
        if v.abs() > problem.d * (1.0 + 1e-12) {
            return Err(Error::OutsideBall { n: initial.start + i, value: *v, d: problem.d });
        }
    }
    let budget = tail_budget(problem);
    let budget_certified = budget < opts.tol / 10.0;
    if opts.strict_budget && !budget_certified {
        return Err(Error::TailBudget { budget, limit: opts.tol / 10.0 });
    }
    let n_op = problem.operator_start();
    let mut x = initial.clone();
    x.n3 = n_op;
    let mut deltas = Vec::new();
    let mut growth = 0;
    let stats = |deltas: &Vec<f64>| IterationStats {
        iterations: deltas.len(),
        final_delta: deltas.last().copied().unwrap_or(f64::INFINITY),
        per_step_deltas: deltas.clone(),
        measured_rate: measured_rate(deltas),
        tail_budget: budget,
        budget_certified,
    };
    while deltas.len() < opts.max_iter {
        let y = apply_t(&x, problem)?;
        let delta = sup_diff(&x, &y, n_op);
        growth = match deltas.last() {
            Some(&prev) if delta > prev => growth + 1,
            _ => 0,
        };
        deltas.push(delta);
        x = y;
        if delta < opts.tol {
            return Ok((x, stats(&deltas)));
        }
        if growth >= 5 {
            return Err(Error::Diverged(Box::new(stats(&deltas))));
        }
    }
    Err(Error::NotConverged(Box::new(stats(&deltas))))
}

/// Extends a fixed point below the operator start by solving
/// `x_n + p_n x_{n-k} = -S_n` for `x_{n-k}`, from `n_op - 1` down to the
/// first equation index.
pub fn backward_extend(x: &SolutionWindow, problem: &Problem) -> Result<SolutionWindow> {
    check_shape(x, problem)?;
    let (n_op, hi, k) = (problem.operator_start(), problem.window_end(), problem.eq.k);
    let first = problem.eq.first_index();
    if n_op <= first {
        return Ok(x.clone());
    }
    let t = &problem.tables;
    let small: Vec<usize> = (first..n_op).filter(|&n| t.p[t.i(n)].abs() < EPS_P).collect();
    if !small.is_empty() {
        return Err(Error::SmallP(small));
    }
    let mut y = x.clone();
    y.residuals = None;
    let mut sums = Sums::new(problem);
    for n in (n_op..hi).rev() {
        sums.step(n, &y)?;
    }
    for n in (first..n_op).rev() {
        let s = sums.step(n, &y)?;
        let v = (-y.get(n) - s) / t.p[t.i(n)];
        if !v.is_finite() {
            return Err(Error::NonFinite("the backward extension"));
        }
        y.values[n - k - y.start] = v;
    }
    Ok(y)
}

/// Residual of the equation at `n`.
pub fn residual(x: &SolutionWindow, eq: &EquationSpec, n: usize) -> Result<f64> {
    Ok(residual_terms(eq, &x.values, x.start, n)?.value)
}

pub fn residual_row(x: &SolutionWindow, eq: &EquationSpec, n: usize) -> Result<ResidualTerms> {
    residual_terms(eq, &x.values, x.start, n)
}

/// Fills `residuals` on `[max(first equation index, start + k), end - 2]`.
pub fn attach_residuals(x: SolutionWindow, eq: &EquationSpec) -> Result<SolutionWindow> {
    let from = eq.first_index().max(x.start + eq.k);
    attach_residuals_from(x, eq, from)
}

/// Fills `residuals` on `[from, end - 2]`.
pub fn attach_residuals_from(mut x: SolutionWindow, eq: &EquationSpec, from: usize) -> Result<SolutionWindow> {
    let to = x.end().saturating_sub(2);
    let mut res = Vec::new();
    for n in from..=to {
        res.push(residual(&x, eq, n)?);
    }
    x.residual_start = from;
    x.residuals = Some(res);
    Ok(x)
}

/// Iterate, extend backwards and attach residuals.
pub fn solve(problem: &Problem, initial: &SolutionWindow, opts: IterationOptions) -> Result<(SolutionWindow, IterationStats)> {
    let (x, stats) = iterate(problem, initial, opts)?;
    let x = backward_extend(&x, problem)?;
    Ok((attach_residuals(x, &problem.eq)?, stats))
}
