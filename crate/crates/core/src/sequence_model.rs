//! Closed-form sequences, scalar functions, odd-rational exponents and
//! truncated series with optional certified tail bounds.

use std::fmt;
use std::str::FromStr;

use num_integer::Integer;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::expr::{Env, EvalError, Expr, ParseError, Var};

/// A real sequence given by an expression in `n`.
#[derive(Clone, Debug)]
pub struct SequenceExpr {
    ast: Expr,
    source: String,
}

impl SequenceExpr {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        Ok(SequenceExpr { ast: Expr::parse(text, &[Var::N])?, source: text.trim().to_string() })
    }

    /// Wraps an already-built tree (for instance the result of a substitution).
    pub fn from_ast(ast: Expr) -> Self {
        let source = ast.to_string();
        SequenceExpr { ast, source }
    }

    pub fn constant(v: f64) -> Self {
        SequenceExpr::from_ast(Expr::Num(v))
    }

    pub fn eval(&self, n: usize) -> Result<f64, EvalError> {
        self.ast.eval(&Env::at_index(n as f64))
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn source_text(&self) -> &str {
        &self.source
    }

    /// `Some(v)` when the expression does not depend on `n`.
    pub fn as_constant(&self) -> Option<f64> {
        if self.ast.is_constant() {
            self.ast.eval(&Env::default()).ok()
        } else {
            None
        }
    }
}

impl fmt::Display for SequenceExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Serialize for SequenceExpr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for SequenceExpr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        SequenceExpr::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// A scalar function given by an expression in `x`.
#[derive(Clone, Debug)]
pub struct ScalarFn {
    ast: Expr,
    source: String,
}

impl ScalarFn {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        Ok(ScalarFn { ast: Expr::parse(text, &[Var::X])?, source: text.trim().to_string() })
    }

    pub fn eval(&self, x: f64) -> Result<f64, EvalError> {
        self.ast.eval(&Env::at_point(x))
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn source_text(&self) -> &str {
        &self.source
    }
}

impl fmt::Display for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RationalError {
    #[error("'{0}' is not of the form num/den")]
    Malformed(String),
    #[error("{num}/{den} is not a ratio of positive odd integers")]
    NotOddPositive { num: i64, den: i64 },
}

/// A ratio of positive odd integers, kept in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OddRational {
    num: u64,
    den: u64,
}

impl OddRational {
    pub const ONE: OddRational = OddRational { num: 1, den: 1 };

    pub fn new(num: i64, den: i64) -> Result<Self, RationalError> {
        if num <= 0 || den <= 0 || num % 2 == 0 || den % 2 == 0 {
            return Err(RationalError::NotOddPositive { num, den });
        }
        let (num, den) = (num as u64, den as u64);
        let g = num.gcd(&den);
        Ok(OddRational { num: num / g, den: den / g })
    }

    pub fn num(self) -> u64 {
        self.num
    }

    pub fn den(self) -> u64 {
        self.den
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn recip(self) -> Self {
        OddRational { num: self.den, den: self.num }
    }
}

impl fmt::Display for OddRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for OddRational {
    type Err = RationalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || RationalError::Malformed(s.to_string());
        let (num, den) = match s.split_once('/') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (s.trim(), "1"),
        };
        let num: i64 = num.parse().map_err(|_| malformed())?;
        let den: i64 = den.parse().map_err(|_| malformed())?;
        OddRational::new(num, den)
    }
}

impl Serialize for OddRational {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OddRational {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum GammaError {
    #[error("gamma at n = {n}: {source}")]
    Eval { n: usize, source: EvalError },
    #[error("gamma at n = {n}: {part} = {value} is not an integer")]
    NotInteger { n: usize, part: &'static str, value: f64 },
    #[error("gamma at n = {n}: {source}")]
    Rational { n: usize, source: RationalError },
}

/// The exponent sequence, as separate numerator and denominator expressions.
#[derive(Clone, Debug)]
pub struct GammaSpec {
    pub num_expr: SequenceExpr,
    pub den_expr: SequenceExpr,
}

impl GammaSpec {
    pub fn new(num_expr: SequenceExpr, den_expr: SequenceExpr) -> Self {
        GammaSpec { num_expr, den_expr }
    }

    pub fn at(&self, n: usize) -> Result<OddRational, GammaError> {
        let part = |expr: &SequenceExpr, name: &'static str| -> Result<i64, GammaError> {
            let v = expr.eval(n).map_err(|source| GammaError::Eval { n, source })?;
            if v.fract() != 0.0 || v.abs() > 9.0e15 {
                return Err(GammaError::NotInteger { n, part: name, value: v });
            }
            Ok(v as i64)
        };
        let num = part(&self.num_expr, "numerator")?;
        let den = part(&self.den_expr, "denominator")?;
        OddRational::new(num, den).map_err(|source| GammaError::Rational { n, source })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("signed power of a non-finite value")]
pub struct NonFiniteInput;

/// `sign(t) * |t|^(num/den)` for an odd/odd exponent.
///
/// Odd symmetry is exact because the magnitude is computed from `|t|` and the
/// sign is reattached afterwards.
pub fn signed_pow(t: f64, e: OddRational) -> Result<f64, NonFiniteInput> {
    if !t.is_finite() {
        return Err(NonFiniteInput);
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let a = t.abs();
    let mag = if e.den == 1 {
        a.powf(e.num as f64)
    } else {
        let root = nth_root(a, e.den);
        if e.num == 1 {
            root
        } else {
            root.powf(e.num as f64)
        }
    };
    Ok(mag.copysign(t))
}

/// Positive real `den`-th root with one Newton correction.
fn nth_root(a: f64, den: u64) -> f64 {
    let d = den as f64;
    let y = a.powf(1.0 / d);
    let yd = y.powf(d);
    if y == 0.0 || !yd.is_finite() || yd == 0.0 {
        return y;
    }
    y * (1.0 - (yd - a) / (d * yd))
}

/// Neumaier compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for v in iter {
            s.add(v);
        }
        s
    }
}

/// Suffix sums `out[i] = tail + sum(values[i..])`, accumulated from the end.
pub fn suffix_sums(values: &[f64], tail: f64) -> Vec<f64> {
    let mut out = vec![0.0; values.len() + 1];
    let mut acc = CompensatedSum::new();
    acc.add(tail);
    out[values.len()] = acc.value();
    for i in (0..values.len()).rev() {
        acc.add(values[i]);
        out[i] = acc.value();
    }
    out
}

#[derive(Clone, Debug)]
pub enum TailMode {
    /// Stop after 8 consecutive terms below `eps_tail`; no error bound.
    Heuristic,
    /// `majorant(i) >= |term(i)|` with `tail_bound(m) >= sum_{i>=m} majorant(i)`.
    Majorant { majorant: SequenceExpr, tail_bound: SequenceExpr },
}

#[derive(Clone, Debug)]
pub struct TailPolicy {
    pub mode: TailMode,
    pub eps_tail: f64,
    pub max_terms: usize,
}

impl TailPolicy {
    pub fn heuristic(eps_tail: f64, max_terms: usize) -> Self {
        assert!(eps_tail > 0.0, "eps_tail must be positive");
        assert!(max_terms > 0, "max_terms must be positive");
        TailPolicy { mode: TailMode::Heuristic, eps_tail, max_terms }
    }

    pub fn with_majorant(self, majorant: SequenceExpr, tail_bound: SequenceExpr) -> Self {
        TailPolicy { mode: TailMode::Majorant { majorant, tail_bound }, ..self }
    }
}

/// Number of consecutive small terms required by the heuristic stop rule.
pub const SMALL_RUN: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailSum {
    pub value: f64,
    /// `None` when the truncation error is not certified.
    pub error_bound: Option<f64>,
    pub terms: usize,
}

impl TailSum {
    pub fn certified(&self) -> bool {
        self.error_bound.is_some()
    }

    /// Upper bound for nonnegative series, or the plain value when uncertified.
    pub fn upper(&self) -> f64 {
        self.value + self.error_bound.unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum TailError {
    #[error("series term at i = {index}: {source}")]
    Eval { index: usize, source: EvalError },
    #[error("no stopping point within {max_terms} terms starting at {from}")]
    MaxTermsExceeded { from: usize, max_terms: usize },
    #[error("constant nonzero term {0}: the series diverges")]
    Divergent(f64),
    #[error("majorant violated at i = {index}: |term| = {term} > {majorant}")]
    MajorantViolated { index: usize, term: f64, majorant: f64 },
}

/// Approximates `sum_{i >= from} term(i)` under `policy`.
pub fn tail_sum(term: &SequenceExpr, from: usize, policy: &TailPolicy) -> Result<TailSum, TailError> {
    if let Some(c) = term.as_constant() {
        return if c == 0.0 { Ok(TailSum { value: 0.0, error_bound: Some(0.0), terms: 0 }) } else { Err(TailError::Divergent(c)) };
    }
    tail_sum_with(|i| term.eval(i), from, policy)
}

/// Same as [`tail_sum`] for terms supplied by a closure.
pub fn tail_sum_with<F>(mut term: F, from: usize, policy: &TailPolicy) -> Result<TailSum, TailError>
where
    F: FnMut(usize) -> Result<f64, EvalError>,
{
    let mut acc = CompensatedSum::new();
    let mut eval = |i: usize| term(i).map_err(|source| TailError::Eval { index: i, source });
    match &policy.mode {
        TailMode::Heuristic => {
            let mut run = 0;
            for (count, i) in (from..).enumerate() {
                if count >= policy.max_terms {
                    break;
                }
                let t = eval(i)?;
                acc.add(t);
                run = if t.abs() < policy.eps_tail { run + 1 } else { 0 };
                if run == SMALL_RUN {
                    return Ok(TailSum { value: acc.value(), error_bound: None, terms: count + 1 });
                }
            }
        }
        TailMode::Majorant { majorant, tail_bound } => {
            for (count, i) in (from..).enumerate() {
                if count > policy.max_terms {
                    break;
                }
                let bound = tail_bound.eval(i).map_err(|source| TailError::Eval { index: i, source })?;
                if bound < policy.eps_tail {
                    return Ok(TailSum { value: acc.value(), error_bound: Some(bound), terms: count });
                }
                let t = eval(i)?;
                let m = majorant.eval(i).map_err(|source| TailError::Eval { index: i, source })?;
                if m < 0.0 || t.abs() > m * (1.0 + 1e-12) {
                    return Err(TailError::MajorantViolated { index: i, term: t.abs(), majorant: m });
                }
                acc.add(t);
            }
        }
    }
    Err(TailError::MaxTermsExceeded { from, max_terms: policy.max_terms })
}
