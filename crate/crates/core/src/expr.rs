//! Expression trees over a small, fixed set of named variables.
//!
//! The grammar is the usual arithmetic one: `+ - * /`, right-associative `^`,
//! unary minus, parentheses, decimal literals (with optional exponent) and the
//! functions `sin cos exp abs sign`. See `docs/grammar.md` for the full
//! description.

use std::fmt;

use thiserror::Error;

/// Variables an expression may reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    /// The sequence index.
    N,
    /// The argument of a scalar function.
    X,
    /// A family member index, only used in parameter templates.
    M,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::N => "n",
            Var::X => "x",
            Var::M => "m",
        }
    }

    fn from_name(name: &str) -> Option<Var> {
        match name {
            "n" => Some(Var::N),
            "x" => Some(Var::X),
            "m" => Some(Var::M),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Sign,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "abs" => Some(Func::Abs),
            "sign" => Some(Func::Sign),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Values bound to the variables during evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Env {
    pub n: f64,
    pub x: f64,
    pub m: f64,
}

impl Env {
    pub fn at_index(n: f64) -> Env {
        Env { n, ..Env::default() }
    }

    pub fn at_point(x: f64) -> Env {
        Env { x, ..Env::default() }
    }

    fn get(&self, var: Var) -> f64 {
        match var {
            Var::N => self.n,
            Var::X => self.x,
            Var::M => self.m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("zero raised to a negative power")]
    ZeroToNegativePower,
    #[error("negative base {base} raised to non-integer exponent {exponent}; use a signed power")]
    NegativeBaseFractionalExponent { base: f64, exponent: f64 },
    #[error("non-finite intermediate value")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("empty expression")]
    Empty,
    #[error("unexpected character '{0}'")]
    UnexpectedChar(char),
    #[error("unexpected {0}")]
    UnexpectedToken(String),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unknown identifier '{0}'")]
    UnknownIdentifier(String),
    #[error("malformed number '{0}'")]
    BadNumber(String),
}

/// Parse failure; `pos` is a 0-based character offset into the source.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{kind} at column {}", pos + 1)]
pub struct ParseError {
    pub pos: usize,
    pub kind: ParseErrorKind,
}

impl Expr {
    /// Parses `text`, accepting only the variables in `allowed`.
    pub fn parse(text: &str, allowed: &[Var]) -> Result<Expr, ParseError> {
        let tokens = lex(text)?;
        if tokens.is_empty() {
            return Err(ParseError { pos: 0, kind: ParseErrorKind::Empty });
        }
        let mut parser = Parser { tokens, pos: 0, allowed, end: text.chars().count() };
        let expr = parser.expr()?;
        match parser.peek() {
            None => Ok(expr),
            Some(tok) => Err(ParseError { pos: tok.pos, kind: ParseErrorKind::UnexpectedToken(tok.kind.describe()) }),
        }
    }

    pub fn eval(&self, env: &Env) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(var) => env.get(*var),
            Expr::Neg(inner) => -inner.eval(env)?,
            Expr::Call(func, arg) => {
                let a = arg.eval(env)?;
                match func {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Abs => a.abs(),
                    Func::Sign => {
                        if a > 0.0 {
                            1.0
                        } else if a < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                }
            }
            Expr::Bin(op, lhs, rhs) => {
                let l = lhs.eval(env)?;
                let r = rhs.eval(env)?;
                match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        l / r
                    }
                    BinOp::Pow => real_pow(l, r)?,
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    pub fn uses(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Neg(inner) | Expr::Call(_, inner) => inner.uses(var),
            Expr::Bin(_, l, r) => l.uses(var) || r.uses(var),
        }
    }

    pub fn is_constant(&self) -> bool {
        !(self.uses(Var::N) || self.uses(Var::X) || self.uses(Var::M))
    }

    /// Replaces every occurrence of `var` by `with`.
    pub fn substitute(&self, var: Var, with: &Expr) -> Expr {
        match self {
            Expr::Var(v) if *v == var => with.clone(),
            Expr::Num(_) | Expr::Var(_) => self.clone(),
            Expr::Neg(inner) => Expr::Neg(Box::new(inner.substitute(var, with))),
            Expr::Call(f, inner) => Expr::Call(*f, Box::new(inner.substitute(var, with))),
            Expr::Bin(op, l, r) => Expr::Bin(*op, Box::new(l.substitute(var, with)), Box::new(r.substitute(var, with))),
        }
    }
}

/// Real power with the grammar's rules: negative bases only take integer
/// exponents, `0^e` with `e < 0` is an error.
fn real_pow(base: f64, exponent: f64) -> Result<f64, EvalError> {
    if base == 0.0 {
        return if exponent < 0.0 {
            Err(EvalError::ZeroToNegativePower)
        } else if exponent == 0.0 {
            Ok(1.0)
        } else {
            Ok(0.0)
        };
    }
    if base < 0.0 {
        if exponent.fract() != 0.0 {
            return Err(EvalError::NegativeBaseFractionalExponent { base, exponent });
        }
        let mag = (-base).powf(exponent);
        let odd = exponent.rem_euclid(2.0) == 1.0;
        return Ok(if odd { -mag } else { mag });
    }
    Ok(base.powf(exponent))
}

/// Fully parenthesised rendering; parsing it back yields an equivalent tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Neg(inner) => write!(f, "(-{inner})"),
            Expr::Call(func, arg) => write!(f, "{}({arg})", func.name()),
            Expr::Bin(op, l, r) => write!(f, "({l}{}{r})", op.symbol()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Num(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("identifier '{s}'"),
            TokenKind::Op(c) => format!("'{c}'"),
            TokenKind::LParen => "'('".to_string(),
            TokenKind::RParen => "')'".to_string(),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    kind: TokenKind,
    pos: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part, only when followed by a digit (optionally signed)
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v: f64 = s.parse().map_err(|_| ParseError { pos: start, kind: ParseErrorKind::BadNumber(s.clone()) })?;
            tokens.push(Token { kind: TokenKind::Num(v), pos: start });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            tokens.push(Token { kind: TokenKind::Ident(s), pos: start });
            continue;
        }
        let kind = match c {
            '+' | '-' | '*' | '/' | '^' => TokenKind::Op(c),
            '(' => TokenKind::LParen,
            ')' => TokenKind::RParen,
            other => return Err(ParseError { pos: start, kind: ParseErrorKind::UnexpectedChar(other) }),
        };
        tokens.push(Token { kind, pos: start });
        i += 1;
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    allowed: &'a [Var],
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Result<Token, ParseError> {
        let tok = self.tokens.get(self.pos).cloned().ok_or(ParseError { pos: self.end, kind: ParseErrorKind::UnexpectedEnd })?;
        self.pos += 1;
        Ok(tok)
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<char> {
        match self.peek() {
            Some(Token { kind: TokenKind::Op(c), .. }) if ops.contains(c) => {
                let c = *c;
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        let tok = self.next()?;
        if tok.kind == TokenKind::RParen {
            Ok(())
        } else {
            Err(ParseError { pos: tok.pos, kind: ParseErrorKind::UnexpectedToken(tok.kind.describe()) })
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c) = self.eat_op(&['+', '-']) {
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.eat_op(&['*', '/']) {
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.eat_op(&['-', '+']) {
            Some('-') => Ok(Expr::Neg(Box::new(self.unary()?))),
            Some(_) => self.unary(),
            None => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat_op(&['^']).is_some() {
            // right-associative; the exponent may carry its own sign
            let exponent = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let tok = self.next()?;
        match tok.kind {
            TokenKind::Num(v) => Ok(Expr::Num(v)),
            TokenKind::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                if let Some(func) = Func::from_name(&name) {
                    let open = self.next()?;
                    if open.kind != TokenKind::LParen {
                        return Err(ParseError { pos: open.pos, kind: ParseErrorKind::UnexpectedToken(open.kind.describe()) });
                    }
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                match Var::from_name(&name) {
                    Some(var) if self.allowed.contains(&var) => Ok(Expr::Var(var)),
                    _ => Err(ParseError { pos: tok.pos, kind: ParseErrorKind::UnknownIdentifier(name) }),
                }
            }
            other => Err(ParseError { pos: tok.pos, kind: ParseErrorKind::UnexpectedToken(other.describe()) }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_n(text: &str, n: f64) -> Result<f64, EvalError> {
        Expr::parse(text, &[Var::N]).unwrap().eval(&Env::at_index(n))
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval_n("1 + 2 * 3", 0.0).unwrap(), 7.0);
        assert_eq!(eval_n("2^3^2", 0.0).unwrap(), 512.0);
        assert_eq!(eval_n("-2^2", 0.0).unwrap(), -4.0);
        assert_eq!(eval_n("2^-n", 3.0).unwrap(), 0.125);
        assert_eq!(eval_n("8/2/2", 0.0).unwrap(), 2.0);
        assert_eq!(eval_n("10 - 3 - 2", 0.0).unwrap(), 5.0);
        assert_eq!(eval_n("1.5e2 + 2E-1", 0.0).unwrap(), 150.2);
    }

    #[test]
    fn whitespace_insensitive() {
        assert_eq!(eval_n(" ( n+1 )*( n - 1 ) ", 4.0).unwrap(), eval_n("(n+1)*(n-1)", 4.0).unwrap());
    }

    #[test]
    fn functions() {
        assert_eq!(eval_n("sign(-3) + sign(0) + sign(2)", 0.0).unwrap(), 0.0);
        assert_eq!(eval_n("abs(-2.5)", 0.0).unwrap(), 2.5);
        assert_eq!(eval_n("exp(0) + cos(0) + sin(0)", 0.0).unwrap(), 2.0);
    }

    #[test]
    fn negative_base_rules() {
        assert_eq!(eval_n("(-1)^n", 3.0).unwrap(), -1.0);
        assert_eq!(eval_n("(-2)^n", 4.0).unwrap(), 16.0);
        assert!(matches!(eval_n("(-8)^(1/3)", 0.0), Err(EvalError::NegativeBaseFractionalExponent { .. })));
    }

    #[test]
    fn evaluation_errors() {
        assert_eq!(eval_n("1/(n-2)", 2.0), Err(EvalError::DivisionByZero));
        assert_eq!(eval_n("0^(-1)", 0.0), Err(EvalError::ZeroToNegativePower));
        assert_eq!(eval_n("0^0", 0.0).unwrap(), 1.0);
        assert_eq!(eval_n("exp(1000)", 0.0), Err(EvalError::NonFinite));
    }

    #[test]
    fn parse_errors_carry_positions() {
        let err = Expr::parse("n + * 2", &[Var::N]).unwrap_err();
        assert_eq!(err.pos, 4);
        let err = Expr::parse("n + y", &[Var::N]).unwrap_err();
        assert_eq!(err, ParseError { pos: 4, kind: ParseErrorKind::UnknownIdentifier("y".into()) });
        let err = Expr::parse("x", &[Var::N]).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::UnknownIdentifier(_)));
        assert_eq!(Expr::parse("(n", &[Var::N]).unwrap_err().kind, ParseErrorKind::UnexpectedEnd);
        assert_eq!(Expr::parse("   ", &[Var::N]).unwrap_err().kind, ParseErrorKind::Empty);
        assert!(matches!(Expr::parse("n # 2", &[Var::N]).unwrap_err().kind, ParseErrorKind::UnexpectedChar('#')));
        assert!(matches!(Expr::parse("1.2.3", &[Var::N]).unwrap_err().kind, ParseErrorKind::BadNumber(_)));
        assert!(Expr::parse("n n", &[Var::N]).is_err());
        assert!(Expr::parse("sin n", &[Var::N]).is_err());
    }

    #[test]
    fn display_round_trips() {
        let src = "(-1)^n * 3^(-1/(2*n+1)) - abs(n-4)/(n+1)";
        let e = Expr::parse(src, &[Var::N]).unwrap();
        let again = Expr::parse(&e.to_string(), &[Var::N]).unwrap();
        for n in 0..30 {
            let env = Env::at_index(n as f64);
            assert_eq!(e.eval(&env).unwrap(), again.eval(&env).unwrap());
        }
    }

    #[test]
    fn substitution() {
        let g = Expr::parse("x^2 + 1", &[Var::X]).unwrap();
        let u = Expr::parse("1/n", &[Var::N]).unwrap();
        let composed = g.substitute(Var::X, &u);
        assert!(!composed.uses(Var::X));
        assert_eq!(composed.eval(&Env::at_index(2.0)).unwrap(), 1.25);
    }
}
