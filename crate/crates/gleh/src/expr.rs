//! A small expression language for one-dimensional model coefficients.
//!
//! Supports `+ - * /`, parentheses, the functions `exp`, `sin`, `cos`,
//! `sqrt`, the constants `pi` and `e`, numeric literals, and the free
//! variable `x`. Expressions carry exact symbolic derivatives, which the
//! thermophoresis layer uses for the closed-form drifts.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::real::{convert, Real};

/// A parsed expression tree in one variable.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var,
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    Neg(Arc<Expr>),
    Exp(Arc<Expr>),
    Sin(Arc<Expr>),
    Cos(Arc<Expr>),
    Sqrt(Arc<Expr>),
}

impl Expr {
    /// Parses an expression from text; errors carry a column number.
    pub fn parse(input: &str) -> Result<Expr> {
        Parser::new(input).parse_full()
    }

    /// Constant expression.
    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    /// Evaluates at `x` in any scalar type.
    pub fn eval<T: Real>(&self, x: T) -> T {
        match self {
            Expr::Const(c) => convert(*c),
            Expr::Var => x,
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Neg(a) => -a.eval(x),
            Expr::Exp(a) => a.eval(x).exp(),
            Expr::Sin(a) => a.eval(x).sin(),
            Expr::Cos(a) => a.eval(x).cos(),
            Expr::Sqrt(a) => a.eval(x).sqrt(),
        }
    }

    /// Replaces the free variable by another expression (composition).
    pub fn substitute(&self, replacement: &Expr) -> Expr {
        use Expr::*;
        match self {
            Const(c) => Const(*c),
            Var => replacement.clone(),
            Add(a, b) => add(a.substitute(replacement), b.substitute(replacement)),
            Sub(a, b) => sub(a.substitute(replacement), b.substitute(replacement)),
            Mul(a, b) => mul(a.substitute(replacement), b.substitute(replacement)),
            Div(a, b) => div(a.substitute(replacement), b.substitute(replacement)),
            Neg(a) => neg(a.substitute(replacement)),
            Exp(a) => Exp(Arc::new(a.substitute(replacement))),
            Sin(a) => Sin(Arc::new(a.substitute(replacement))),
            Cos(a) => Cos(Arc::new(a.substitute(replacement))),
            Sqrt(a) => Sqrt(Arc::new(a.substitute(replacement))),
        }
    }

    /// Exact symbolic derivative with light constant folding.
    pub fn derivative(&self) -> Expr {
        use Expr::*;
        match self {
            Const(_) => Const(0.0),
            Var => Const(1.0),
            Add(a, b) => add(a.derivative(), b.derivative()),
            Sub(a, b) => sub(a.derivative(), b.derivative()),
            Mul(a, b) => add(
                mul(a.derivative(), (**b).clone()),
                mul((**a).clone(), b.derivative()),
            ),
            Div(a, b) => div(
                sub(
                    mul(a.derivative(), (**b).clone()),
                    mul((**a).clone(), b.derivative()),
                ),
                mul((**b).clone(), (**b).clone()),
            ),
            Neg(a) => neg(a.derivative()),
            Exp(a) => mul(a.derivative(), Exp(a.clone())),
            Sin(a) => mul(a.derivative(), Cos(a.clone())),
            Cos(a) => neg(mul(a.derivative(), Sin(a.clone()))),
            Sqrt(a) => div(a.derivative(), mul(Const(2.0), Sqrt(a.clone()))),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var => write!(f, "x"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
            Expr::Sqrt(a) => write!(f, "sqrt({a})"),
        }
    }
}

fn is_const(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Const(c) if *c == v)
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        _ if is_const(&a, 0.0) => b,
        _ if is_const(&b, 0.0) => a,
        _ => Expr::Add(Arc::new(a), Arc::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        _ if is_const(&b, 0.0) => a,
        _ => Expr::Sub(Arc::new(a), Arc::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        _ if is_const(&a, 0.0) || is_const(&b, 0.0) => Expr::Const(0.0),
        _ if is_const(&a, 1.0) => b,
        _ if is_const(&b, 1.0) => a,
        _ => Expr::Mul(Arc::new(a), Arc::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    if is_const(&a, 0.0) {
        Expr::Const(0.0)
    } else if is_const(&b, 1.0) {
        a
    } else {
        Expr::Div(Arc::new(a), Arc::new(b))
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(x) => Expr::Const(-x),
        other => Expr::Neg(Arc::new(other)),
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        }
    }

    fn error(&self, msg: &str) -> Error {
        Error::Expression(format!("column {}: {msg} in `{}`", self.pos + 1, self.src))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn parse_full(&mut self) -> Result<Expr> {
        let expr = self.parse_sum()?;
        self.skip_ws();
        if self.pos != self.bytes.len() {
            return Err(self.error("unexpected trailing input"));
        }
        Ok(expr)
    }

    fn parse_sum(&mut self) -> Result<Expr> {
        let mut acc = self.parse_product()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    acc = add(acc, self.parse_product()?);
                }
                Some(b'-') => {
                    self.pos += 1;
                    acc = sub(acc, self.parse_product()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn parse_product(&mut self) -> Result<Expr> {
        let mut acc = self.parse_unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    acc = mul(acc, self.parse_unary()?);
                }
                Some(b'/') => {
                    self.pos += 1;
                    acc = div(acc, self.parse_unary()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn parse_unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(neg(self.parse_unary()?))
            }
            Some(b'+') => {
                self.pos += 1;
                self.parse_unary()
            }
            _ => self.parse_atom(),
        }
    }

    fn parse_atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.parse_sum()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.parse_number(),
            Some(c) if c.is_ascii_alphabetic() => self.parse_name(),
            Some(c) => Err(self.error(&format!("unexpected character `{}`", c as char))),
            None => Err(self.error("unexpected end of expression")),
        }
    }

    fn parse_number(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E')
                && self.pos > start
                && self
                    .bytes
                    .get(self.pos + 1)
                    .is_some_and(|&n| n.is_ascii_digit() || n == b'+' || n == b'-')
            {
                self.pos += 2;
            } else {
                break;
            }
        }
        self.src[start..self.pos]
            .parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| self.error("malformed number"))
    }

    fn parse_name(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        match name {
            "x" => Ok(Expr::Var),
            "pi" => Ok(Expr::Const(std::f64::consts::PI)),
            "e" => Ok(Expr::Const(std::f64::consts::E)),
            "exp" | "sin" | "cos" | "sqrt" => {
                if self.peek() != Some(b'(') {
                    return Err(self.error(&format!("expected `(` after `{name}`")));
                }
                self.pos += 1;
                let arg = self.parse_sum()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                Ok(match name {
                    "exp" => Expr::Exp(Arc::new(arg)),
                    "sin" => Expr::Sin(Arc::new(arg)),
                    "cos" => Expr::Cos(Arc::new(arg)),
                    _ => Expr::Sqrt(Arc::new(arg)),
                })
            }
            other => Err(self.error(&format!("unknown name `{other}`"))),
        }
    }
}
