//! Existence hypotheses and the constants of the existence argument.
//!
//! Coefficients are tabulated on `[start, window_end]` and then past the window
//! in doubling chunks until every remainder series used later has 8
//! consecutive terms below `eps_tail`. Suprema over all `n` are taken on the
//! tabulated range; they count as certified only under the equation's
//! `monotone_tails` assertion.

use std::ops::RangeInclusive;

use serde::Serialize;

use crate::equation::EquationSpec;
use crate::error::{Error, Result};
use crate::sequence_model::{
    signed_pow, suffix_sums, tail_sum, GammaError, GammaSpec, OddRational, ScalarFn, SequenceExpr, TailError, TailPolicy, TailSum, SMALL_RUN,
};

/// A nonnegative majorant `term(n)` with a closed-form bound `tail(m) >= sum_{n>=m} term(n)`.
#[derive(Clone, Debug)]
pub struct Majorant {
    pub term: SequenceExpr,
    pub tail: SequenceExpr,
}

#[derive(Clone, Debug)]
pub struct TailOptions {
    pub eps_tail: f64,
    pub max_terms: usize,
    /// Majorant for `|a_i|`.
    pub a: Option<Majorant>,
    /// Majorant for `|q_i|`.
    pub q: Option<Majorant>,
    /// Majorant for the outer terms of the α remainder.
    pub alpha: Option<Majorant>,
    /// Majorant for the outer terms of the β remainder.
    pub beta: Option<Majorant>,
}

impl TailOptions {
    pub fn heuristic(eps_tail: f64, max_terms: usize) -> Self {
        assert!(eps_tail > 0.0 && max_terms > 0);
        TailOptions { eps_tail, max_terms, a: None, q: None, alpha: None, beta: None }
    }

    fn policy(&self, majorant: &Option<Majorant>) -> TailPolicy {
        let base = TailPolicy::heuristic(self.eps_tail, self.max_terms);
        match majorant {
            Some(m) => base.with_majorant(m.term.clone(), m.tail.clone()),
            None => base,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RemainderSample {
    pub n: usize,
    pub value: f64,
    pub certified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub gamma_plus: f64,
    pub gamma_plus_ok: bool,
    pub gamma_plus_certified: bool,
    #[serde(rename = "P")]
    pub p_bound: f64,
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub n3: Option<usize>,
    pub d: f64,
    #[serde(rename = "M_d")]
    pub m_d: f64,
    #[serde(rename = "M_star")]
    pub m_star: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub alpha_rem: Vec<RemainderSample>,
    pub beta_rem: Vec<RemainderSample>,
    pub z2_ok: bool,
    pub z22_ok: bool,
    pub z3_ok: bool,
    pub add_series_ok: bool,
    pub constants_ok: bool,
    pub selfmap_ok: bool,
    pub n_selfmap: Option<usize>,
    pub n_operator: Option<usize>,
    pub window_start: usize,
    pub window_end: usize,
    pub certified: bool,
}

impl HypothesisReport {
    pub fn all_ok(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let checks = [
            (self.gamma_plus_ok, "gamma_plus_ok"),
            (self.z2_ok, "z2_ok"),
            (self.z22_ok, "z22_ok"),
            (self.z3_ok, "z3_ok"),
            (self.add_series_ok, "add_series_ok"),
            (self.constants_ok, "constants_ok"),
            (self.selfmap_ok, "selfmap_ok"),
        ];
        checks.iter().filter(|(ok, _)| !ok).map(|(_, name)| *name).collect()
    }

    pub fn alpha_at(&self, n: usize) -> Option<RemainderSample> {
        self.alpha_rem.iter().find(|s| s.n == n).copied()
    }

    pub fn beta_at(&self, n: usize) -> Option<RemainderSample> {
        self.beta_rem.iter().find(|s| s.n == n).copied()
    }
}

/// `(max γ_n on the window, max <= 1)`.
pub fn compute_gamma_plus(gamma: &GammaSpec, window: RangeInclusive<usize>) -> Result<(f64, bool), GammaError> {
    let mut gp = f64::NEG_INFINITY;
    for n in window {
        gp = gp.max(gamma.at(n)?.value());
    }
    Ok((gp, gp <= 1.0))
}

/// `(P, n1)`: `n1` is the first index whose tail maximum of `|p|` on the window
/// is below 1, and `P` is that maximum.
pub fn estimate_p(p: &SequenceExpr, window: RangeInclusive<usize>) -> Result<(f64, usize)> {
    let (lo, hi) = (*window.start(), *window.end());
    let values = window.map(|n| p.eval(n).map(f64::abs).map_err(|source| Error::Coefficient { name: "p", n, source })).collect::<Result<Vec<_>>>()?;
    let mut tail_max = vec![0.0; values.len()];
    let mut m = 0.0f64;
    for i in (0..values.len()).rev() {
        m = m.max(values[i]);
        tail_max[i] = m;
    }
    match tail_max.iter().position(|&t| t < 1.0) {
        Some(i) => Ok((tail_max[i], lo + i)),
        None => Err(Error::PNotContractive { tail_max: tail_max.last().copied().unwrap_or(f64::NAN) }),
    }
    .map(|(pb, n1)| {
        debug_assert!(n1 <= hi);
        (pb, n1)
    })
}

const GRID: usize = 100_000;

/// `max |f|` on `[-d, d]`: dense grid plus golden-section refinement around the best sample.
pub fn max_abs(f: &ScalarFn, d: f64) -> Result<f64> {
    let eval = |x: f64| f.eval(x).map(f64::abs).map_err(|source| Error::Function { x, source });
    let h = 2.0 * d / GRID as f64;
    let grid = |i: usize| if i == GRID { d } else { -d + i as f64 * h };
    let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
    for i in 0..=GRID {
        let v = eval(grid(i))?;
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let (mut lo, mut hi) = (grid(best_i.saturating_sub(1)), grid((best_i + 1).min(GRID)));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let m1 = hi - ratio * (hi - lo);
        let m2 = lo + ratio * (hi - lo);
        if eval(m1)? >= eval(m2)? {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    Ok(best.max(eval(0.5 * (lo + hi))?))
}

/// Coefficients tabulated on `[lo, ext]`, where `hi` is the window end.
#[derive(Clone, Debug)]
pub struct Tables {
    pub lo: usize,
    pub hi: usize,
    pub ext: usize,
    pub r: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub a: Vec<f64>,
    pub gamma: Vec<OddRational>,
    /// `Σ_{i>=n} |a_i|` for `n` in `[lo, ext + 1]`, past-the-end part taken as an upper bound.
    pub a_rem: Vec<f64>,
    pub q_rem: Vec<f64>,
    pub inner_certified: bool,
}

impl Tables {
    fn new(lo: usize, hi: usize) -> Self {
        Tables { lo, hi, ext: hi, r: vec![], p: vec![], q: vec![], a: vec![], gamma: vec![], a_rem: vec![], q_rem: vec![], inner_certified: false }
    }

    fn push(&mut self, eq: &EquationSpec, n: usize) -> Result<()> {
        debug_assert_eq!(n, self.lo + self.r.len());
        self.r.push(eq.coefficient("r", n)?);
        self.p.push(eq.coefficient("p", n)?);
        self.q.push(eq.coefficient("q", n)?);
        self.a.push(eq.coefficient("a", n)?);
        self.gamma.push(eq.gamma.at(n)?);
        Ok(())
    }

    fn truncate(&mut self, ext: usize) {
        let len = ext - self.lo + 1;
        self.r.truncate(len);
        self.p.truncate(len);
        self.q.truncate(len);
        self.a.truncate(len);
        self.gamma.truncate(len);
        self.ext = ext;
    }

    #[inline]
    pub fn i(&self, n: usize) -> usize {
        n - self.lo
    }
}

/// Per-index terms of every remainder series.
#[derive(Clone, Copy, Debug, Default)]
struct IndexTerms {
    weight: f64,
    lambda: f64,
    alpha: f64,
    beta: f64,
    z2: f64,
    z22: f64,
    sigma: f64,
    theta_a: f64,
    theta_q: f64,
}

impl IndexTerms {
    fn compute(r: f64, gamma: OddRational, a_rem: f64, q_rem: f64, gamma_plus: f64, m_star: f64) -> Result<Self> {
        let inv_r = 1.0 / r.abs();
        let e = gamma.recip();
        let ev = e.value();
        let weight = signed_pow(inv_r, e)?;
        let c = m_star * (a_rem + q_rem);
        let lambda = if ev == 1.0 {
            1.0
        } else if c == 0.0 {
            0.0
        } else {
            ev * c.powf(ev - 1.0)
        };
        let wl = mul0(weight, lambda);
        Ok(IndexTerms {
            weight,
            lambda,
            alpha: signed_pow(inv_r * a_rem, e)?,
            beta: signed_pow(inv_r * q_rem, e)?,
            z2: (inv_r * a_rem).powf(1.0 / gamma_plus),
            z22: (inv_r * q_rem).powf(1.0 / gamma_plus),
            sigma: signed_pow(m_star * inv_r * (a_rem + q_rem), e)?,
            theta_a: mul0(wl, a_rem),
            theta_q: mul0(wl, q_rem),
        })
    }

    fn all_below(&self, eps: f64) -> bool {
        [self.alpha, self.beta, self.z2, self.z22, self.sigma, self.theta_a, self.theta_q].iter().all(|t| *t < eps)
    }
}

/// Product that treats `0 * inf` as 0 (a vanishing tail kills any weight).
fn mul0(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

enum Stall {
    Inner(&'static str, TailError),
    Outer { alpha_large: bool, beta_large: bool },
}

enum WalkError {
    Stall(Stall),
    Fatal(Error),
}

impl From<Error> for WalkError {
    fn from(e: Error) -> Self {
        WalkError::Fatal(e)
    }
}

fn check_majorant(m: &Option<Majorant>, j: usize, value: f64) -> Result<()> {
    if let Some(m) = m {
        let bound = m.term.eval(j).map_err(|source| Error::Coefficient { name: "majorant", n: j, source })?;
        if value > bound * (1.0 + 1e-12) {
            return Err(Error::Tail { what: "remainder majorant", source: TailError::MajorantViolated { index: j, term: value, majorant: bound } });
        }
    }
    Ok(())
}

fn inner_tail(expr: &SequenceExpr, from: usize, policy: &TailPolicy, what: &'static str) -> Result<TailSum, WalkError> {
    tail_sum(expr, from, policy).map_err(|e| match e {
        TailError::MaxTermsExceeded { .. } | TailError::Divergent(_) => WalkError::Stall(Stall::Inner(what, e)),
        other => WalkError::Fatal(Error::Tail { what, source: other }),
    })
}

fn tabulate(eq: &EquationSpec, hi: usize, gamma_plus: f64, m_star: f64, tails: &TailOptions) -> Result<Tables, WalkError> {
    let lo = eq.start;
    let mut t = Tables::new(lo, hi);
    for n in lo..=hi {
        t.push(eq, n)?;
    }
    let (abs_a, abs_q) = (eq.abs_a(), eq.abs_q());
    let (pol_a, pol_q) = (tails.policy(&tails.a), tails.policy(&tails.q));
    let mut chunk = 64;
    let mut next = hi + 1;
    let mut run = 0;
    let mut last = IndexTerms::default();
    let stop = 'walk: loop {
        let end = next + chunk - 1;
        for n in next..=end {
            t.push(eq, n)?;
        }
        let ta = inner_tail(&abs_a, end + 1, &pol_a, "sum of |a_i|")?;
        let tq = inner_tail(&abs_q, end + 1, &pol_q, "sum of |q_i|")?;
        let range = t.i(next)..=t.i(end);
        let a_suffix = suffix_sums(&t.a[range.clone()].iter().map(|v| v.abs()).collect::<Vec<_>>(), ta.upper());
        let q_suffix = suffix_sums(&t.q[range].iter().map(|v| v.abs()).collect::<Vec<_>>(), tq.upper());
        for (off, j) in (next..=end).enumerate() {
            let terms = IndexTerms::compute(t.r[t.i(j)], t.gamma[t.i(j)], a_suffix[off], q_suffix[off], gamma_plus, m_star)?;
            check_majorant(&tails.alpha, j, terms.alpha)?;
            check_majorant(&tails.beta, j, terms.beta)?;
            run = if terms.all_below(tails.eps_tail) { run + 1 } else { 0 };
            last = terms;
            if run == SMALL_RUN {
                break 'walk j;
            }
        }
        if end - hi >= tails.max_terms {
            return Err(WalkError::Stall(Stall::Outer {
                alpha_large: last.alpha.max(last.z2) >= tails.eps_tail,
                beta_large: last.beta.max(last.z22) >= tails.eps_tail,
            }));
        }
        next = end + 1;
        chunk *= 2;
    };
    t.truncate(stop);
    let ta = inner_tail(&abs_a, stop + 1, &pol_a, "sum of |a_i|")?;
    let tq = inner_tail(&abs_q, stop + 1, &pol_q, "sum of |q_i|")?;
    t.a_rem = suffix_sums(&t.a.iter().map(|v| v.abs()).collect::<Vec<_>>(), ta.upper());
    t.q_rem = suffix_sums(&t.q.iter().map(|v| v.abs()).collect::<Vec<_>>(), tq.upper());
    t.inner_certified = ta.certified() && tq.certified();
    Ok(t)
}

/// Everything derived from a successful tabulation.
#[derive(Clone, Debug)]
pub struct Remainders {
    /// `|1/r_j|^{1/γ_j}` on `[lo, ext]`.
    pub weight: Vec<f64>,
    /// Lipschitz constant of `t ↦ t^{1/γ_j}` on `[-c_j, c_j]`, `c_j = M*(A_j + Q_j)`.
    pub lambda: Vec<f64>,
    /// `α_n` on `[lo, ext + 1]`.
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// `σ_n = Σ_{j>=n} [M* |1/r_j| (A_j + Q_j)]^{1/γ_j}`, the self-map remainder.
    pub sigma: Vec<f64>,
    /// `Σ_{j>=n} weight_j λ_j A_j`.
    pub theta_a: Vec<f64>,
    /// `Σ_{j>=n} weight_j λ_j Q_j`.
    pub theta_q: Vec<f64>,
    pub alpha_certified: bool,
    pub beta_certified: bool,
}

fn remainders_from(t: &Tables, gamma_plus: f64, m_star: f64, tails: &TailOptions) -> Result<(Remainders, f64, f64)> {
    let len = t.ext - t.lo + 1;
    let mut terms = Vec::with_capacity(len);
    for i in 0..len {
        terms.push(IndexTerms::compute(t.r[i], t.gamma[i], t.a_rem[i], t.q_rem[i], gamma_plus, m_star)?);
    }
    let after = |m: &Option<Majorant>| -> Result<Option<f64>> {
        m.as_ref().map(|m| m.tail.eval(t.ext + 1).map_err(|source| Error::Coefficient { name: "majorant tail", n: t.ext + 1, source })).transpose()
    };
    let alpha_after = after(&tails.alpha)?;
    let beta_after = after(&tails.beta)?;
    let col = |f: fn(&IndexTerms) -> f64| terms.iter().map(f).collect::<Vec<_>>();
    let z2: f64 = col(|x| x.z2).iter().sum();
    let z22: f64 = col(|x| x.z22).iter().sum();
    let rem = Remainders {
        weight: col(|x| x.weight),
        lambda: col(|x| x.lambda),
        alpha: suffix_sums(&col(|x| x.alpha), alpha_after.unwrap_or(0.0)),
        beta: suffix_sums(&col(|x| x.beta), beta_after.unwrap_or(0.0)),
        sigma: suffix_sums(&col(|x| x.sigma), 0.0),
        theta_a: suffix_sums(&col(|x| x.theta_a), 0.0),
        theta_q: suffix_sums(&col(|x| x.theta_q), 0.0),
        alpha_certified: t.inner_certified && alpha_after.is_some(),
        beta_certified: t.inner_certified && beta_after.is_some(),
    };
    Ok((rem, z2, z22))
}

/// The equation together with its tables, remainders and report, ready for
/// the operator.
#[derive(Clone, Debug)]
pub struct Problem {
    pub eq: EquationSpec,
    pub d: f64,
    pub tails: TailOptions,
    pub tables: Tables,
    pub rem: Remainders,
    pub report: HypothesisReport,
    operator_start: usize,
}

struct Analysed {
    report: HypothesisReport,
    parts: Option<(Tables, Remainders)>,
    stall: Option<Error>,
}

fn analyse(eq: &EquationSpec, d: f64, window_end: usize, tails: &TailOptions) -> Result<Analysed> {
    eq.validate()?;
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidSpec(format!("d = {d} must be positive")));
    }
    let lo = eq.start;
    if window_end < eq.first_index() + 2 {
        return Err(Error::WindowTooShort { needed: eq.first_index() + 2, window_end });
    }
    let (gamma_plus, gamma_plus_ok) = compute_gamma_plus(&eq.gamma, lo..=window_end)?;
    let (p_bound, n1, z3_ok) = match estimate_p(&eq.p, lo..=window_end) {
        Ok((pb, n1)) => (pb, Some(n1), true),
        Err(Error::PNotContractive { tail_max }) => (tail_max, None, false),
        Err(e) => return Err(e),
    };
    let m_d = max_abs(&eq.f, d)?;
    let m_star = m_d.max(d.powf(eq.alpha.value()));
    let c = (d - p_bound * d) / (2.0 * m_star).powf(1.0 / gamma_plus);
    let mut report = HypothesisReport {
        gamma_plus,
        gamma_plus_ok,
        gamma_plus_certified: eq.monotone_tails,
        p_bound,
        n1,
        n2: None,
        n3: None,
        d,
        m_d,
        m_star,
        c,
        alpha_rem: vec![],
        beta_rem: vec![],
        z2_ok: false,
        z22_ok: false,
        z3_ok,
        add_series_ok: false,
        constants_ok: false,
        selfmap_ok: false,
        n_selfmap: None,
        n_operator: None,
        window_start: eq.window_start(),
        window_end,
        certified: false,
    };
    let tables = match tabulate(eq, window_end, gamma_plus, m_star, tails) {
        Ok(t) => t,
        Err(WalkError::Fatal(e)) => return Err(e),
        Err(WalkError::Stall(stall)) => {
            let err = match stall {
                Stall::Inner(what, source) => Error::Tail { what, source },
                Stall::Outer { alpha_large, beta_large } => {
                    report.add_series_ok = true;
                    report.z2_ok = !alpha_large;
                    report.z22_ok = !beta_large;
                    Error::Tail { what: "outer remainder series", source: TailError::MaxTermsExceeded { from: window_end + 1, max_terms: tails.max_terms } }
                }
            };
            return Ok(Analysed { report, parts: None, stall: Some(err) });
        }
    };
    let (rem, z2, z22) = remainders_from(&tables, gamma_plus, m_star, tails)?;
    report.add_series_ok = tables.a_rem[0].is_finite() && tables.q_rem[0].is_finite();
    report.z2_ok = z2.is_finite();
    report.z22_ok = z22.is_finite();
    for n in lo..=window_end {
        let i = tables.i(n);
        report.alpha_rem.push(RemainderSample { n, value: rem.alpha[i], certified: rem.alpha_certified });
        report.beta_rem.push(RemainderSample { n, value: rem.beta[i], certified: rem.beta_certified });
    }
    report.n2 = (lo..=window_end).find(|&n| {
        let i = tables.i(n);
        rem.alpha[i] <= c && rem.beta[i] <= c && tables.a_rem[i] <= 1.0 && tables.q_rem[i] <= 1.0
    });
    report.constants_ok = c > 0.0 && report.n2.is_some();
    report.n3 = match (n1, report.n2) {
        (Some(a), Some(b)) => Some(a.max(b)),
        _ => None,
    };
    report.n_selfmap = (lo..=window_end).find(|&n| rem.sigma[tables.i(n)] <= (1.0 - p_bound) * d);
    report.selfmap_ok = report.n_selfmap.is_some();
    report.n_operator = match (report.n3, report.n_selfmap) {
        (Some(n3), Some(ns)) => Some(n3.max(ns).max(eq.first_index())),
        _ => None,
    };
    report.certified = eq.monotone_tails && rem.alpha_certified && rem.beta_certified;
    Ok(Analysed { report, parts: Some((tables, rem)), stall: None })
}

/// Computes the full report. Hypothesis failures are reported in the flags;
/// only malformed input is an error.
pub fn choose_constants(eq: &EquationSpec, d: f64, window_end: usize, tails: &TailOptions) -> Result<HypothesisReport> {
    Ok(analyse(eq, d, window_end, tails)?.report)
}

/// `(α_n, β_n)` with certification flags.
pub fn remainders(eq: &EquationSpec, n: usize, window_end: usize, tails: &TailOptions) -> Result<(RemainderSample, RemainderSample)> {
    let analysed = analyse(eq, 1.0, window_end.max(n), tails)?;
    if let Some(err) = analysed.stall {
        return Err(err);
    }
    match (analysed.report.alpha_at(n), analysed.report.beta_at(n)) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::OutOfWindow { n, start: eq.start, end: window_end }),
    }
}

impl Problem {
    /// Builds the problem; fails unless every hypothesis flag holds.
    pub fn prepare(eq: &EquationSpec, d: f64, window_end: usize, tails: &TailOptions) -> Result<Problem> {
        let analysed = analyse(eq, d, window_end, tails)?;
        let report = analysed.report;
        let (tables, rem) = match analysed.parts {
            Some(parts) if report.all_ok() => parts,
            _ => {
                let mut msg = report.failures().join(", ");
                if let Some(err) = analysed.stall {
                    msg = format!("{msg} ({err})");
                }
                return Err(Error::Hypothesis(msg));
            }
        };
        let operator_start = report.n_operator.expect("set whenever all flags hold");
        if operator_start + 2 > window_end {
            return Err(Error::WindowTooShort { needed: operator_start + 2, window_end });
        }
        Ok(Problem { eq: eq.clone(), d, tails: tails.clone(), tables, rem, report, operator_start })
    }

    /// First index at which the operator acts (below it values are frozen).
    pub fn operator_start(&self) -> usize {
        self.operator_start
    }

    /// Moves the operator start further out; earlier starts would void the
    /// self-map bound.
    pub fn set_operator_start(&mut self, n: usize) -> Result<()> {
        let own = self.report.n_operator.expect("prepared problems have an operator start");
        if n < own {
            return Err(Error::InvalidSpec(format!("operator start {n} is below the admissible {own}")));
        }
        if n + 2 > self.window_end() {
            return Err(Error::WindowTooShort { needed: n + 2, window_end: self.window_end() });
        }
        self.operator_start = n;
        Ok(())
    }

    pub fn window_start(&self) -> usize {
        self.eq.window_start()
    }

    pub fn window_end(&self) -> usize {
        self.tables.hi
    }

    pub fn p_bound(&self) -> f64 {
        self.report.p_bound
    }

    pub fn m_star(&self) -> f64 {
        self.report.m_star
    }

    /// Self-map remainder `σ_n`.
    pub fn sigma(&self, n: usize) -> f64 {
        self.rem.sigma[self.tables.i(n)]
    }
}
