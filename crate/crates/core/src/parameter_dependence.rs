//! Families in which the nonlinear term carries a parameter sequence:
//!
//! ```text
//! Δ(r_n (Δ(x_n + p_n x_{n-k}))^{γ_n}) + q_n x_n + a_n f(x_{n+1}) g(u^m_n) = 0
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::equation::EquationSpec;
use crate::error::{Error, Result};
use crate::expr::{Expr, ParseError, Var};
use crate::fixed_point_solver::{attach_residuals_from, iterate, IterationOptions, IterationStats, SolutionWindow};
use crate::hypothesis_checker::{Problem, TailOptions};
use crate::sequence_model::{OddRational, ScalarFn, SequenceExpr};

#[derive(Clone, Debug)]
pub struct FamilySpec {
    /// Equation with `α = 1`; its `a_n` is multiplied by `g(u_n)`.
    pub base: EquationSpec,
    pub g: ScalarFn,
    /// The limit parameter `u^0`.
    pub u0: SequenceExpr,
    /// `u^1, u^2, ...` in order.
    pub params: Vec<SequenceExpr>,
    pub d1_const: f64,
    pub d2_const: f64,
    /// Half-width of the `x` box in the growth conditions.
    pub d1: f64,
    /// Half-width of the parameter box in the growth conditions.
    pub d2: f64,
}

/// Expands a template in `n` and `m` into `u^1, ..., u^members`.
pub fn params_from_template(template: &str, members: usize) -> Result<Vec<SequenceExpr>, ParseError> {
    let ast = Expr::parse(template, &[Var::N, Var::M])?;
    Ok((1..=members).map(|m| SequenceExpr::from_ast(ast.substitute(Var::M, &Expr::Num(m as f64)))).collect())
}

impl FamilySpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.base.alpha != OddRational::ONE {
            return Err(Error::InvalidSpec(format!("family equations need alpha = 1/1, got {}", self.base.alpha)));
        }
        if self.params.is_empty() {
            return Err(Error::InvalidSpec("the family has no members".into()));
        }
        for (name, v) in [("D1", self.d1_const), ("D2", self.d2_const), ("d1", self.d1), ("d2", self.d2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidSpec(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    /// `u^0` followed by the members.
    pub fn all_params(&self) -> impl Iterator<Item = &SequenceExpr> {
        std::iter::once(&self.u0).chain(&self.params)
    }

    /// Equation of the member with parameter `u`.
    pub fn member(&self, u: &SequenceExpr) -> EquationSpec {
        self.base.scale_a(&self.g.ast().substitute(Var::X, u.ast()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthCheck {
    /// Largest `|f(x)(g(s) - g(t))| / |s - t|` with `|x| <= d1`, `|s|, |t| <= d2`.
    #[serde(rename = "D1_hat")]
    pub d1_hat: f64,
    /// Largest `|(f(x) - f(y)) g(s)| / |x - y|` on the same boxes.
    #[serde(rename = "D2_hat")]
    pub d2_hat: f64,
    pub ok: bool,
    /// Both quotients with `x, y, s, t` all drawn independently. These are
    /// unbounded whenever `f` is not constant on the box.
    #[serde(rename = "D1_hat_full_box")]
    pub d1_hat_full: f64,
    #[serde(rename = "D2_hat_full_box")]
    pub d2_hat_full: f64,
}

pub const MIN_GROWTH_SAMPLES: usize = 10_000;

/// Monte-Carlo estimates of the growth constants on `[-d1, d1] x [-d2, d2]`.
pub fn verify_growth(spec: &FamilySpec, d1: f64, d2: f64, samples: usize, seed: u64) -> Result<GrowthCheck> {
    if samples < MIN_GROWTH_SAMPLES {
        return Err(Error::InvalidSpec(format!("at least {MIN_GROWTH_SAMPLES} growth samples are required")));
    }
    let fg = |x: f64, s: f64| -> Result<f64> {
        let g = spec.g.eval(s).map_err(|source| Error::Function { x: s, source })?;
        let v = spec.base.f_at(x)? * g;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("f(x) g(s)"))
        }
    };
    let quotient = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num.abs() / den.abs() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GrowthCheck { d1_hat: 0.0, d2_hat: 0.0, ok: false, d1_hat_full: 0.0, d2_hat_full: 0.0 };
    for _ in 0..samples {
        let (x, y) = (rng.random_range(-d1..=d1), rng.random_range(-d1..=d1));
        let (s, t) = (rng.random_range(-d2..=d2), rng.random_range(-d2..=d2));
        out.d1_hat = out.d1_hat.max(quotient(fg(x, s)? - fg(x, t)?, s - t));
        out.d2_hat = out.d2_hat.max(quotient(fg(x, s)? - fg(y, s)?, x - y));
        let full = fg(x, s)? - fg(y, t)?;
        out.d1_hat_full = out.d1_hat_full.max(quotient(full, s - t));
        out.d2_hat_full = out.d2_hat_full.max(quotient(full, x - y));
    }
    out.ok = out.d1_hat <= spec.d1_const && out.d2_hat <= spec.d2_const;
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct FamilyOptions {
    pub d: f64,
    pub window_end: usize,
    pub iteration: IterationOptions,
    /// Constant initial guess; it also fixes the values below the common
    /// operator start, so a nonzero value keeps the family nontrivial.
    pub initial: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemberSummary {
    pub m: usize,
    pub u_sup: f64,
    pub iterations: usize,
    pub final_delta: f64,
    pub max_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairRow {
    pub s: usize,
    pub t: usize,
    pub x_diff: f64,
    pub u_diff: f64,
    pub bound: f64,
    pub ok: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Distance {
    pub m: usize,
    pub x_diff: f64,
    pub u_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DependenceReport {
    pub theta1: f64,
    pub theta2: f64,
    /// First index of the tail norm; also the common operator start.
    pub n4: usize,
    pub g_sup: f64,
    pub valid: bool,
    pub members: Vec<MemberSummary>,
    /// Row `m = 0` is the equation at `u^0`.
    pub pairwise: Vec<PairRow>,
    pub distances: Vec<Distance>,
    pub distances_monotone: bool,
    /// Tail distance between the solution at `u^0` and the limit
    /// extrapolated from the last two members.
    pub limit_check: f64,
}

#[derive(Clone, Debug)]
pub struct FamilyRun {
    pub report: DependenceReport,
    /// Index 0 holds the solution at `u^0`.
    pub solutions: Vec<SolutionWindow>,
    pub stats: Vec<IterationStats>,
}

fn member_error(index: usize) -> impl Fn(Error) -> Error {
    move |e| Error::FamilyMember { index, reason: e.to_string() }
}

fn tail_diff(x: &SolutionWindow, y: &SolutionWindow, from: usize) -> f64 {
    (from..=x.end()).fold(0.0f64, |m, n| m.max((x.get(n) - y.get(n)).abs()))
}

fn sup_on(u: &SequenceExpr, v: Option<&SequenceExpr>, lo: usize, hi: usize, index: usize) -> Result<f64> {
    let mut s = 0.0f64;
    for n in lo..=hi {
        let at = |e: &SequenceExpr| e.eval(n).map_err(|source| member_error(index)(Error::Coefficient { name: "u", n, source }));
        let d = match v {
            Some(v) => at(u)? - at(v)?,
            None => at(u)?,
        };
        s = s.max(d.abs());
    }
    Ok(s)
}

/// Solves every member from a common operator start and checks the
/// Lipschitz dependence on the parameter.
pub fn solve_family(spec: &FamilySpec, tails: &TailOptions, opts: FamilyOptions) -> Result<FamilyRun> {
    spec.validate()?;
    if spec.d1 < opts.d {
        return Err(Error::InvalidSpec(format!("the growth box d1 = {} must contain the ball d = {}", spec.d1, opts.d)));
    }
    let params: Vec<&SequenceExpr> = spec.all_params().collect();
    let (lo, hi) = (spec.base.window_start(), opts.window_end);
    let mut g_sup = 0.0f64;
    for (index, u) in params.iter().enumerate() {
        let u_sup = sup_on(u, None, lo, hi, index)?;
        if u_sup > spec.d2 {
            return Err(member_error(index)(Error::InvalidSpec(format!("sup |u| = {u_sup} exceeds d2 = {}", spec.d2))));
        }
        for n in lo..=hi {
            let v = u.eval(n).ok().and_then(|u| spec.g.eval(u).ok());
            let v = v.ok_or_else(|| member_error(index)(Error::NonFinite("g(u)")))?;
            g_sup = g_sup.max(v.abs());
        }
    }

    // Envelope equation: a scaled by sup |g(u)| dominates every member.
    let scale = if g_sup > 0.0 { g_sup } else { 1.0 };
    let envelope = Problem::prepare(&spec.base.scale_a(&Expr::Num(scale)), opts.d, hi, tails)?;
    let t = &envelope.tables;
    let rem = &envelope.rem;
    let start = envelope.operator_start();
    let theta1_n: Vec<f64> = (start..=hi).map(|n| t.p[t.i(n)].abs() + spec.d2_const * rem.theta_a[t.i(n)] / scale + rem.theta_q[t.i(n)]).collect();
    let theta2_n: Vec<f64> = (start..=hi).map(|n| spec.d1_const * rem.theta_a[t.i(n)] / scale).collect();
    let suffix = |v: &[f64], i: usize| v[i..].iter().fold(0.0f64, |m, x| m.max(*x));
    let first = (0..theta1_n.len()).find(|&i| suffix(&theta1_n, i) < 1.0 && suffix(&theta2_n, i) < 1.0);
    let Some(first) = first else {
        return Err(Error::Hypothesis("the family constants theta1, theta2 never drop below 1 on the window".into()));
    };

    let mut problems = Vec::with_capacity(params.len());
    for (index, u) in params.iter().enumerate() {
        let pb = Problem::prepare(&spec.member(u), opts.d, hi, tails).map_err(member_error(index))?;
        problems.push(pb);
    }
    let n4 = problems.iter().map(|p| p.operator_start()).fold(start + first, usize::max);
    if n4 + 2 > hi {
        return Err(Error::WindowTooShort { needed: n4 + 2, window_end: hi });
    }
    let theta1 = suffix(&theta1_n, n4 - start);
    let theta2 = suffix(&theta2_n, n4 - start);

    let mut solutions = Vec::with_capacity(params.len());
    let mut stats = Vec::with_capacity(params.len());
    let mut members = Vec::with_capacity(params.len());
    for (index, pb) in problems.iter_mut().enumerate() {
        let err = member_error(index);
        pb.set_operator_start(n4).map_err(&err)?;
        let initial = SolutionWindow::filled(pb, opts.initial);
        let (x, st) = iterate(pb, &initial, opts.iteration).map_err(&err)?;
        let x = attach_residuals_from(x, &pb.eq, n4).map_err(&err)?;
        members.push(MemberSummary {
            m: index,
            u_sup: sup_on(params[index], None, lo, hi, index)?,
            iterations: st.iterations,
            final_delta: st.final_delta,
            max_residual: x.max_residual().unwrap_or(0.0),
        });
        solutions.push(x);
        stats.push(st);
    }

    let slack = 10.0 * opts.iteration.tol;
    let factor = theta2 / (1.0 - theta1);
    let mut pairwise = Vec::new();
    for s in 0..params.len() {
        for t in s + 1..params.len() {
            let x_diff = tail_diff(&solutions[s], &solutions[t], n4);
            let u_diff = sup_on(params[s], Some(params[t]), lo, hi, t)?;
            let bound = factor * u_diff + slack;
            pairwise.push(PairRow { s, t, x_diff, u_diff, bound, ok: x_diff <= bound });
        }
    }
    let distances: Vec<Distance> = pairwise.iter().filter(|r| r.s == 0).map(|r| Distance { m: r.t, x_diff: r.x_diff, u_diff: r.u_diff }).collect();
    let distances_monotone = distances.windows(2).all(|w| w[1].x_diff <= w[0].x_diff);
    let limit_check = extrapolated_gap(&solutions, &distances, n4);

    let report =
        DependenceReport { theta1, theta2, n4, g_sup, valid: theta1 < 1.0 && theta2 < 1.0, members, pairwise, distances_monotone, distances, limit_check };
    Ok(FamilyRun { report, solutions, stats })
}

/// Linear extrapolation in `‖u^m - u^0‖` from the last two members, compared
/// with the solution at `u^0`.
fn extrapolated_gap(solutions: &[SolutionWindow], distances: &[Distance], from: usize) -> f64 {
    let last = solutions.len() - 1;
    let x0 = &solutions[0];
    let xm = &solutions[last];
    if last < 2 {
        return tail_diff(xm, x0, from);
    }
    let (h1, h2) = (distances[last - 2].u_diff, distances[last - 1].u_diff);
    let xp = &solutions[last - 1];
    let w = if h1 > h2 { h2 / (h1 - h2) } else { 0.0 };
    (from..=x0.end()).fold(0.0f64, |m, n| {
        let lim = xm.get(n) + (xm.get(n) - xp.get(n)) * w;
        m.max((lim - x0.get(n)).abs())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equation::tests::{example1, seq};

    fn linear_family(template: &str, u0: &str, members: usize) -> FamilySpec {
        let mut base = example1();
        base.alpha = OddRational::ONE;
        base.f = ScalarFn::parse("x").unwrap();
        FamilySpec {
            base,
            g: ScalarFn::parse("x").unwrap(),
            u0: seq(u0),
            params: params_from_template(template, members).unwrap(),
            d1_const: 2.0,
            d2_const: 1.0,
            d1: 2.0,
            d2: 1.0,
        }
    }

    fn options() -> FamilyOptions {
        FamilyOptions { d: 2.0, window_end: 120, iteration: IterationOptions { tol: 1e-12, max_iter: 200, strict_budget: false }, initial: 2.0 }
    }

    fn tails() -> TailOptions {
        TailOptions::heuristic(1e-15, 200_000)
    }

    #[test]
    fn templates_expand_in_m() {
        let p = params_from_template("1/m + n*0", 3).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p[2].eval(7).unwrap(), 1.0 / 3.0);
        assert!(params_from_template("1/k", 2).is_err());
    }

    #[test]
    fn growth_examples() {
        let spec = linear_family("1/m", "0", 2);
        let g = verify_growth(&spec, 1.0, 1.0, 20_000, 1).unwrap();
        assert!(g.d1_hat <= 1.0 && g.d1_hat > 0.99);
        assert!(g.d2_hat <= 1.0 && g.ok);
        let again = verify_growth(&spec, 1.0, 1.0, 20_000, 1).unwrap();
        assert_eq!(g, again);

        let mut constant = spec.clone();
        constant.base.f = ScalarFn::parse("1").unwrap();
        constant.g = ScalarFn::parse("1").unwrap();
        let g = verify_growth(&constant, 1.0, 1.0, 10_000, 2).unwrap();
        assert_eq!((g.d1_hat, g.d2_hat, g.d1_hat_full, g.d2_hat_full), (0.0, 0.0, 0.0, 0.0));

        // x s - y t = x (s - t) + t (x - y): with x != y the quotient by |s - t| is unbounded.
        let full = verify_growth(&spec, 1.0, 1.0, 10_000, 3).unwrap();
        assert!(full.d1_hat_full > 10.0 * spec.d1_const && full.d2_hat_full > 10.0 * spec.d2_const);
        assert!(verify_growth(&spec, 1.0, 1.0, 100, 3).is_err());
    }

    #[test]
    fn linear_family_depends_lipschitz_on_u() {
        let run = solve_family(&linear_family("1/m", "0", 10), &tails(), options()).unwrap();
        let r = &run.report;
        assert!(r.valid && r.theta1 < 1.0 && r.theta2 < 1.0);
        assert_eq!(r.pairwise.len(), 55);
        assert!(r.pairwise.iter().all(|p| p.ok), "{:?}", r.pairwise.iter().find(|p| !p.ok));
        assert!(r.distances_monotone);
        assert!(r.distances.iter().all(|d| d.x_diff > 0.0));
        assert!(r.limit_check < r.distances[9].x_diff);
        assert!(r.members.iter().all(|m| m.final_delta < 1e-12));
        let again = solve_family(&linear_family("1/m", "0", 10), &tails(), options()).unwrap();
        assert_eq!(run.report, again.report);
    }

    #[test]
    fn unit_exponent_family_has_small_residuals() {
        let mut spec = linear_family("1/m", "0", 4);
        spec.base = crate::equation::tests::linear("0.5", "2^(-n)", "2^(-n)", 2);
        let run = solve_family(&spec, &tails(), options()).unwrap();
        assert!(run.report.pairwise.iter().all(|p| p.ok));
        assert!(run.report.members.iter().all(|m| m.max_residual < 1e-9), "{:?}", run.report.members);
    }

    #[test]
    fn constant_family_is_flat() {
        let run = solve_family(&linear_family("0.5", "0.5", 4), &tails(), options()).unwrap();
        assert!(run.report.pairwise.iter().all(|p| p.x_diff == 0.0 && p.u_diff == 0.0));
        assert!(run.report.limit_check < 10.0 * options().iteration.tol);
    }

    #[test]
    fn vanishing_g_gives_identical_members() {
        let mut spec = linear_family("1/m", "0", 3);
        spec.g = ScalarFn::parse("0*x").unwrap();
        let run = solve_family(&spec, &tails(), options()).unwrap();
        assert_eq!(run.report.g_sup, 0.0);
        assert!(run.solutions.windows(2).all(|w| w[0].values == w[1].values));
    }

    #[test]
    fn invalid_families() {
        let mut spec = linear_family("1/m", "0", 2);
        spec.base.alpha = "3/1".parse().unwrap();
        assert!(matches!(solve_family(&spec, &tails(), options()), Err(Error::InvalidSpec(_))));
        let spec = linear_family("3/m", "0", 2);
        assert!(matches!(solve_family(&spec, &tails(), options()), Err(Error::FamilyMember { index: 1, .. })));
    }
}
