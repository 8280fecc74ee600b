//! The equation data model and its pointwise residual.

use crate::error::{Error, Result};
use crate::expr::{BinOp, Expr, Func};
use crate::sequence_model::{signed_pow, GammaSpec, OddRational, ScalarFn, SequenceExpr};

#[derive(Clone, Debug)]
pub struct SmallDenominator {
    pub expr: SequenceExpr,
    pub threshold: f64,
}

/// All data of one equation. Coefficients are required to be defined for
/// `n >= start`.
#[derive(Clone, Debug)]
pub struct EquationSpec {
    pub r: SequenceExpr,
    pub p: SequenceExpr,
    pub q: SequenceExpr,
    pub a: SequenceExpr,
    pub gamma: GammaSpec,
    pub alpha: OddRational,
    pub k: usize,
    pub f: ScalarFn,
    pub start: usize,
    /// User assertion that |p|, |a|, |q|, 1/|r| and γ behave monotonically
    /// past the window, so window maxima stand in for suprema.
    pub monotone_tails: bool,
    pub small_denominator: Option<SmallDenominator>,
}

impl EquationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidSpec("k must be at least 1".into()));
        }
        if self.alpha.value() < 1.0 {
            return Err(Error::InvalidSpec(format!("alpha = {} must be at least 1", self.alpha)));
        }
        Ok(())
    }

    /// First index at which the equation itself is imposed.
    pub fn first_index(&self) -> usize {
        self.k.max(self.start)
    }

    /// First index a solution window has to cover.
    pub fn window_start(&self) -> usize {
        self.first_index() - self.k
    }

    pub fn coefficient(&self, name: &'static str, n: usize) -> Result<f64> {
        let expr = match name {
            "r" => &self.r,
            "p" => &self.p,
            "q" => &self.q,
            "a" => &self.a,
            other => unreachable!("unknown coefficient {other}"),
        };
        let v = expr.eval(n).map_err(|source| Error::Coefficient { name, n, source })?;
        if name == "r" && v == 0.0 {
            return Err(Error::ZeroR(n));
        }
        Ok(v)
    }

    pub fn f_at(&self, x: f64) -> Result<f64> {
        self.f.eval(x).map_err(|source| Error::Function { x, source })
    }

    /// `|a_n|` as an expression, used for tail sums.
    pub fn abs_a(&self) -> SequenceExpr {
        SequenceExpr::from_ast(Expr::Call(Func::Abs, Box::new(self.a.ast().clone())))
    }

    pub fn abs_q(&self) -> SequenceExpr {
        SequenceExpr::from_ast(Expr::Call(Func::Abs, Box::new(self.q.ast().clone())))
    }

    /// The same equation with `a` multiplied by `factor(n)`.
    pub fn scale_a(&self, factor: &Expr) -> EquationSpec {
        let a = Expr::Bin(BinOp::Mul, Box::new(self.a.ast().clone()), Box::new(factor.clone()));
        EquationSpec { a: SequenceExpr::from_ast(a), ..self.clone() }
    }

    /// `true` when the small-denominator expression is below its threshold at `n`.
    pub fn hazard(&self, n: usize) -> bool {
        match &self.small_denominator {
            Some(sd) => sd.expr.eval(n).map(|v| v.abs() < sd.threshold).unwrap_or(true),
            None => false,
        }
    }
}

/// The residual at one index together with the magnitude of its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualTerms {
    pub value: f64,
    pub scale: f64,
}

impl ResidualTerms {
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.value.abs() / self.scale
        } else {
            self.value.abs()
        }
    }
}

/// Left-hand side of the equation at `n` for values `x` starting at index `start`.
/// Coefficients are evaluated directly from their expressions.
pub fn residual_terms(eq: &EquationSpec, x: &[f64], start: usize, n: usize) -> Result<ResidualTerms> {
    let end = start + x.len().saturating_sub(1);
    if x.is_empty() || n < start + eq.k || n + 2 > end || n < eq.start {
        return Err(Error::OutOfWindow { n, start: start + eq.k, end: end.saturating_sub(2) });
    }
    let at = |m: usize| x[m - start];
    let z = |m: usize| -> Result<f64> { Ok(at(m) + eq.coefficient("p", m)? * at(m - eq.k)) };
    let w = |m: usize| -> Result<f64> {
        let gamma = eq.gamma.at(m)?;
        Ok(eq.coefficient("r", m)? * signed_pow(z(m + 1)? - z(m)?, gamma)?)
    };
    let (w0, w1) = (w(n)?, w(n + 1)?);
    let q_term = eq.coefficient("q", n)? * signed_pow(at(n), eq.alpha)?;
    let a_term = eq.coefficient("a", n)? * eq.f_at(at(n + 1))?;
    let value = w1 - w0 + q_term + a_term;
    if !value.is_finite() {
        return Err(Error::NonFinite("the residual"));
    }
    Ok(ResidualTerms { value, scale: w1.abs() + w0.abs() + q_term.abs() + a_term.abs() })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn seq(s: &str) -> SequenceExpr {
        SequenceExpr::parse(s).unwrap()
    }

    pub(crate) fn example1() -> EquationSpec {
        EquationSpec {
            r: seq("3^(-1/(2*n+1)) * (-1)^n"),
            p: seq("1/2"),
            q: seq("2^(-n)"),
            a: seq("2^(-n)"),
            gamma: GammaSpec::new(seq("1"), seq("2*n+1")),
            alpha: "5/1".parse().unwrap(),
            k: 2,
            f: ScalarFn::parse("x^3").unwrap(),
            start: 0,
            monotone_tails: true,
            small_denominator: None,
        }
    }

    pub(crate) fn example2() -> EquationSpec {
        EquationSpec {
            r: seq("n-1"),
            p: seq("1/((n-1)^2*(n-2))"),
            q: seq("-4/(n^2*(n-1)^3)"),
            a: seq("-1/(n*(n+1)*sin(n*(n+1)))"),
            gamma: GammaSpec::new(seq("1"), seq("1")),
            alpha: "3/1".parse().unwrap(),
            k: 1,
            f: ScalarFn::parse("sin(x)").unwrap(),
            start: 3,
            monotone_tails: false,
            small_denominator: Some(SmallDenominator { expr: seq("sin(n*(n+1))"), threshold: 1e-6 }),
        }
    }

    pub(crate) fn linear(p: &str, a: &str, q: &str, k: usize) -> EquationSpec {
        EquationSpec {
            r: seq("1"),
            p: seq(p),
            q: seq(q),
            a: seq(a),
            gamma: GammaSpec::new(seq("1"), seq("1")),
            alpha: OddRational::ONE,
            k,
            f: ScalarFn::parse("x").unwrap(),
            start: 0,
            monotone_tails: true,
            small_denominator: None,
        }
    }

    fn residual(eq: &EquationSpec, x: &[f64], n: usize) -> f64 {
        residual_terms(eq, x, 0, n).unwrap().value
    }

    #[test]
    fn alternating_sequence_solves_first_example() {
        let eq = example1();
        let x: Vec<f64> = (0..=52).map(|n| if n % 2 == 0 { 1.0 } else { -1.0 }).collect();
        for n in 2..=50 {
            assert!(residual(&eq, &x, n).abs() < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn quadratic_sequence_solves_second_example() {
        let eq = example2();
        let x: Vec<f64> = (0..=40).map(|n| (n * (n.max(1) - 1)) as f64).collect();
        for n in 3..=30 {
            let terms = residual_terms(&eq, &x, 0, n).unwrap();
            assert!(terms.relative() < 1e-9, "n = {n}: {terms:?}");
        }
    }

    #[test]
    fn constants_solve_the_trivial_equation() {
        let eq = linear("0", "0", "0", 1);
        let x = vec![0.7; 20];
        for n in 1..=17 {
            assert_eq!(residual(&eq, &x, n), 0.0);
        }
    }

    #[test]
    fn perturbation_stays_inside_the_stencil() {
        let eq = example1();
        let mut x: Vec<f64> = (0..=40).map(|n| if n % 2 == 0 { 1.0 } else { -1.0 }).collect();
        x[20] += 0.1;
        for n in 2..=38 {
            let r = residual(&eq, &x, n).abs();
            // x_20 enters through x_n, x_{n+1}, x_{n+2} and the delayed x_{n-k}, ..., x_{n+2-k}
            let touched = (18..=20).contains(&n) || (20..=22).contains(&n);
            assert_eq!(r > 1e-9, touched, "n = {n}, residual {r}");
        }
    }

    #[test]
    fn out_of_window_is_rejected() {
        let eq = example1();
        let x = vec![0.0; 10];
        assert!(matches!(residual_terms(&eq, &x, 0, 1), Err(Error::OutOfWindow { .. })));
        assert!(matches!(residual_terms(&eq, &x, 0, 8), Err(Error::OutOfWindow { .. })));
        assert!(residual_terms(&eq, &x, 0, 7).is_ok());
    }

    #[test]
    fn validation() {
        let mut eq = example1();
        eq.k = 0;
        assert!(eq.validate().is_err());
        let mut eq = example1();
        eq.alpha = "1/3".parse().unwrap();
        assert!(eq.validate().is_err());
        assert!(example2().validate().is_ok());
        assert_eq!((example2().first_index(), example2().window_start()), (3, 2));
    }
}
