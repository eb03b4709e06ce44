//! Scalar expressions over the upper-level variable `x` and lower-level
//! variables `y1..ym`: parsing, evaluation, symbolic differentiation, and
//! canonical printing.
//!
//! Expressions are immutable trees sharing subterms through `Arc`, so they can
//! be evaluated from concurrent workers without synchronization. The operator
//! set (`+ - * / ^`, unary minus, `sqrt exp log sin cos`) is closed under
//! differentiation. Construction performs constant folding and nothing else.

use std::fmt;
use std::sync::Arc;

/// A variable: the scalar parameter `x` or a lower-level coordinate.
/// `Y(i)` is the 0-based index of `y{i+1}` in source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X => write!(f, "x"),
            Var::Y(i) => write!(f, "y{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Arc<Expr>),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    Pow(Arc<Expr>, Arc<Expr>),
    Sqrt(Arc<Expr>),
    Exp(Arc<Expr>),
    Log(Arc<Expr>),
    Sin(Arc<Expr>),
    Cos(Arc<Expr>),
}

/// Evaluation failure: the offending subexpression is carried in printed form.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalError {
    pub kind: EvalErrorKind,
    pub subexpr: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalErrorKind {
    DivisionByZero,
    LogNonPositive,
    SqrtNegative,
    /// Negative base with non-integer exponent, or zero base with negative exponent.
    PowDomain,
    NonFinite,
    /// Variable index outside the supplied `y` slice.
    UnknownVariable,
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            EvalErrorKind::DivisionByZero => "division by zero",
            EvalErrorKind::LogNonPositive => "log of non-positive value",
            EvalErrorKind::SqrtNegative => "sqrt of negative value",
            EvalErrorKind::PowDomain => "power outside real domain",
            EvalErrorKind::NonFinite => "non-finite result",
            EvalErrorKind::UnknownVariable => "variable outside problem dimension",
        };
        write!(f, "{what} in `{}`", self.subexpr)
    }
}

impl std::error::Error for EvalError {}

fn err(kind: EvalErrorKind, e: &Expr) -> EvalError {
    EvalError { kind, subexpr: e.to_string() }
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    /// Evaluate at `x`, `y`. Domain violations and non-finite intermediate
    /// results are reported as errors, never propagated as NaN/inf.
    pub fn eval(&self, x: f64, y: &[f64]) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::Y(i)) => {
                *y.get(*i).ok_or_else(|| err(EvalErrorKind::UnknownVariable, self))?
            }
            Expr::Neg(a) => -a.eval(x, y)?,
            Expr::Add(a, b) => a.eval(x, y)? + b.eval(x, y)?,
            Expr::Sub(a, b) => a.eval(x, y)? - b.eval(x, y)?,
            Expr::Mul(a, b) => a.eval(x, y)? * b.eval(x, y)?,
            Expr::Div(a, b) => {
                let den = b.eval(x, y)?;
                if den == 0.0 {
                    return Err(err(EvalErrorKind::DivisionByZero, self));
                }
                a.eval(x, y)? / den
            }
            Expr::Pow(a, b) => {
                let base = a.eval(x, y)?;
                let exp = b.eval(x, y)?;
                if exp.fract() == 0.0 && exp.abs() <= i32::MAX as f64 {
                    if base == 0.0 && exp < 0.0 {
                        return Err(err(EvalErrorKind::PowDomain, self));
                    }
                    base.powi(exp as i32)
                } else if base > 0.0 {
                    base.powf(exp)
                } else {
                    return Err(err(EvalErrorKind::PowDomain, self));
                }
            }
            Expr::Sqrt(a) => {
                let v = a.eval(x, y)?;
                if v < 0.0 {
                    return Err(err(EvalErrorKind::SqrtNegative, self));
                }
                v.sqrt()
            }
            Expr::Exp(a) => a.eval(x, y)?.exp(),
            Expr::Log(a) => {
                let v = a.eval(x, y)?;
                if v <= 0.0 {
                    return Err(err(EvalErrorKind::LogNonPositive, self));
                }
                v.ln()
            }
            Expr::Sin(a) => a.eval(x, y)?.sin(),
            Expr::Cos(a) => a.eval(x, y)?.cos(),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(err(EvalErrorKind::NonFinite, self))
        }
    }

    /// Partial derivative with respect to `v`, as a new expression over the
    /// same operator set.
    pub fn differentiate(&self, v: Var) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(w) => Expr::Const(if *w == v { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.differentiate(v)),
            Expr::Add(a, b) => add(a.differentiate(v), b.differentiate(v)),
            Expr::Sub(a, b) => sub(a.differentiate(v), b.differentiate(v)),
            Expr::Mul(a, b) => add(
                mul(a.differentiate(v), (**b).clone()),
                mul((**a).clone(), b.differentiate(v)),
            ),
            Expr::Div(a, b) => div(
                sub(
                    mul(a.differentiate(v), (**b).clone()),
                    mul((**a).clone(), b.differentiate(v)),
                ),
                pow((**b).clone(), Expr::Const(2.0)),
            ),
            Expr::Pow(a, b) => {
                if let Expr::Const(c) = **b {
                    // c * a^(c-1) * a'
                    mul(
                        mul(Expr::Const(c), pow((**a).clone(), Expr::Const(c - 1.0))),
                        a.differentiate(v),
                    )
                } else {
                    // a^b * (b' log a + b a'/a)
                    mul(
                        (*self).clone(),
                        add(
                            mul(b.differentiate(v), log((**a).clone())),
                            mul((**b).clone(), div(a.differentiate(v), (**a).clone())),
                        ),
                    )
                }
            }
            Expr::Sqrt(a) => div(
                a.differentiate(v),
                mul(Expr::Const(2.0), sqrt((**a).clone())),
            ),
            Expr::Exp(a) => mul((*self).clone(), a.differentiate(v)),
            Expr::Log(a) => div(a.differentiate(v), (**a).clone()),
            Expr::Sin(a) => mul(cos((**a).clone()), a.differentiate(v)),
            Expr::Cos(a) => neg(mul(sin((**a).clone()), a.differentiate(v))),
        }
    }

    /// All variables appearing in the expression.
    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort_by_key(|v| match v {
            Var::X => 0,
            Var::Y(i) => i + 1,
        });
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<Var>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => out.push(*v),
            Expr::Neg(a) | Expr::Sqrt(a) | Expr::Exp(a) | Expr::Log(a) | Expr::Sin(a)
            | Expr::Cos(a) => a.collect_vars(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b)
            | Expr::Pow(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Largest y-index used, as a count (0 when no y appears).
    pub fn max_y_dimension(&self) -> usize {
        self.variables()
            .iter()
            .filter_map(|v| match v {
                Var::Y(i) => Some(i + 1),
                Var::X => None,
            })
            .max()
            .unwrap_or(0)
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

// Smart constructors: constant folding (and the unit cases of it) only.
// A fold is applied only when the folded value is finite, so domain errors
// stay visible at evaluation time.

fn fold2(op: impl Fn(f64, f64) -> f64, a: &Expr, b: &Expr) -> Option<Expr> {
    if let (Expr::Const(x), Expr::Const(y)) = (a, b) {
        let v = op(*x, *y);
        if v.is_finite() {
            return Some(Expr::Const(v));
        }
    }
    None
}

pub fn add(a: Expr, b: Expr) -> Expr {
    if let Some(e) = fold2(|x, y| x + y, &a, &b) {
        return e;
    }
    match (&a, &b) {
        (Expr::Const(c), _) if *c == 0.0 => b,
        (_, Expr::Const(c)) if *c == 0.0 => a,
        _ => Expr::Add(Arc::new(a), Arc::new(b)),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    if let Some(e) = fold2(|x, y| x - y, &a, &b) {
        return e;
    }
    match (&a, &b) {
        (_, Expr::Const(c)) if *c == 0.0 => a,
        (Expr::Const(c), _) if *c == 0.0 => neg(b),
        _ => Expr::Sub(Arc::new(a), Arc::new(b)),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    if let Some(e) = fold2(|x, y| x * y, &a, &b) {
        return e;
    }
    match (&a, &b) {
        (Expr::Const(c), _) if *c == 0.0 => Expr::Const(0.0),
        (_, Expr::Const(c)) if *c == 0.0 => Expr::Const(0.0),
        (Expr::Const(c), _) if *c == 1.0 => b,
        (_, Expr::Const(c)) if *c == 1.0 => a,
        _ => Expr::Mul(Arc::new(a), Arc::new(b)),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
        if *y != 0.0 {
            let v = x / y;
            if v.is_finite() {
                return Expr::Const(v);
            }
        }
    }
    match (&a, &b) {
        (_, Expr::Const(c)) if *c == 1.0 => a,
        (Expr::Const(c), Expr::Const(d)) if *c == 0.0 && *d != 0.0 => Expr::Const(0.0),
        _ => Expr::Div(Arc::new(a), Arc::new(b)),
    }
}

pub fn pow(a: Expr, b: Expr) -> Expr {
    if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
        let ok = *x > 0.0 || (y.fract() == 0.0 && !(*x == 0.0 && *y < 0.0));
        if ok {
            let v = x.powf(*y);
            if v.is_finite() {
                return Expr::Const(v);
            }
        }
    }
    match &b {
        Expr::Const(c) if *c == 1.0 => a,
        Expr::Const(c) if *c == 0.0 => Expr::Const(1.0),
        _ => Expr::Pow(Arc::new(a), Arc::new(b)),
    }
}

pub fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => (*inner).clone(),
        _ => Expr::Neg(Arc::new(a)),
    }
}

macro_rules! unary_ctor {
    ($name:ident, $variant:ident, $f:expr) => {
        pub fn $name(a: Expr) -> Expr {
            if let Expr::Const(c) = a {
                let v: f64 = $f(c);
                if v.is_finite() {
                    return Expr::Const(v);
                }
            }
            Expr::$variant(Arc::new(a))
        }
    };
}

unary_ctor!(sqrt, Sqrt, |c: f64| if c >= 0.0 { c.sqrt() } else { f64::NAN });
unary_ctor!(exp, Exp, |c: f64| c.exp());
unary_ctor!(log, Log, |c: f64| if c > 0.0 { c.ln() } else { f64::NAN });
unary_ctor!(sin, Sin, |c: f64| c.sin());
unary_ctor!(cos, Cos, |c: f64| c.cos());

/// Gradient with respect to `(y1, ..., ym)`.
pub fn gradient_y(e: &Expr, m: usize) -> Vec<Expr> {
    (0..m).map(|i| e.differentiate(Var::Y(i))).collect()
}

/// Dense `m x m` Hessian with respect to `y`. Entry `[i][j]` is
/// d^2 e / dy_{i+1} dy_{j+1}; mixed partials are computed once and mirrored.
pub fn hessian_yy(e: &Expr, m: usize) -> Vec<Vec<Expr>> {
    let grad = gradient_y(e, m);
    let mut h = vec![vec![Expr::Const(0.0); m]; m];
    for i in 0..m {
        for j in i..m {
            let d = grad[i].differentiate(Var::Y(j));
            h[j][i] = d.clone();
            h[i][j] = d;
        }
    }
    h
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(self, f)
    }
}

fn write_child(e: &Expr, min_prec: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if e.precedence() < min_prec {
        write!(f, "(")?;
        write_node(e, f)?;
        write!(f, ")")
    } else {
        write_node(e, f)
    }
}

fn write_node(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e {
        Expr::Const(c) => {
            if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                // Print the magnitude behind a unary minus so output reparses
                // to the same folded constant.
                write!(f, "-{}", -c)
            } else {
                write!(f, "{c}")
            }
        }
        Expr::Var(v) => write!(f, "{v}"),
        Expr::Add(a, b) => {
            write_child(a, 1, f)?;
            write!(f, " + ")?;
            write_child(b, 2, f)
        }
        Expr::Sub(a, b) => {
            write_child(a, 1, f)?;
            write!(f, " - ")?;
            write_child(b, 2, f)
        }
        Expr::Mul(a, b) => {
            write_child(a, 2, f)?;
            write!(f, " * ")?;
            write_child(b, 3, f)
        }
        Expr::Div(a, b) => {
            write_child(a, 2, f)?;
            write!(f, " / ")?;
            write_child(b, 3, f)
        }
        Expr::Neg(a) => {
            write!(f, "-")?;
            write_child(a, 4, f)
        }
        Expr::Pow(a, b) => {
            write_child(a, 5, f)?;
            write!(f, "^")?;
            write_child(b, 3, f)
        }
        Expr::Sqrt(a) => write!(f, "sqrt({a})"),
        Expr::Exp(a) => write!(f, "exp({a})"),
        Expr::Log(a) => write!(f, "log({a})"),
        Expr::Sin(a) => write!(f, "sin({a})"),
        Expr::Cos(a) => write!(f, "cos({a})"),
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Parse failure with a byte offset into the source string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "parse error at offset {}: {}", self.offset, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src: src.as_bytes(), pos: 0 };
        let mut out = Vec::new();
        loop {
            lx.skip_ws();
            if lx.pos >= lx.src.len() {
                return Ok(out);
            }
            let start = lx.pos;
            let c = lx.src[lx.pos];
            let tok = match c {
                b'+' => {
                    lx.pos += 1;
                    Tok::Plus
                }
                b'-' => {
                    lx.pos += 1;
                    Tok::Minus
                }
                b'*' => {
                    lx.pos += 1;
                    Tok::Star
                }
                b'/' => {
                    lx.pos += 1;
                    Tok::Slash
                }
                b'^' => {
                    lx.pos += 1;
                    Tok::Caret
                }
                b'(' => {
                    lx.pos += 1;
                    Tok::LParen
                }
                b')' => {
                    lx.pos += 1;
                    Tok::RParen
                }
                b'0'..=b'9' | b'.' => lx.number(start)?,
                c if c.is_ascii_alphabetic() || c == b'_' => lx.ident(start),
                _ => {
                    return Err(ParseError {
                        offset: start,
                        message: format!("unexpected character `{}`", c as char),
                    })
                }
            };
            out.push((tok, start));
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn number(&mut self, start: usize) -> Result<Tok, ParseError> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if self.pos < self.src.len() && (self.src[self.pos] | 32) == b'e' {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-')
            {
                self.pos += 1;
            }
            if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                // Not an exponent after all ("2e" followed by junk): back off.
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Tok::Num)
            .map_err(|_| ParseError { offset: start, message: format!("invalid number `{text}`") })
    }

    fn ident(&mut self, start: usize) -> Tok {
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        Tok::Ident(std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string())
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

/// Parse an expression. Accepted variables are `x` and `y1, y2, ...`;
/// dimension bounds are enforced by the problem loader, not here.
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let toks = Lexer::tokens(src)?;
    let mut p = Parser { toks, pos: 0, end: src.len() };
    let e = p.expr()?;
    if p.pos < p.toks.len() {
        let (tok, off) = &p.toks[p.pos];
        return Err(ParseError { offset: *off, message: format!("unexpected token `{tok:?}`") });
    }
    Ok(e)
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(_, o)| *o).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ParseError { offset: self.offset(), message: format!("expected {what}") })
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    acc = add(acc, self.term()?);
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    acc = sub(acc, self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    acc = mul(acc, self.factor()?);
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    acc = div(acc, self.factor()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            return Ok(neg(self.factor()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.pos += 1;
            let exponent = self.factor()?;
            return Ok(pow(base, exponent));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let off = self.offset();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "closing `)`")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => self.ident_atom(&name, off),
            Some(tok) => {
                Err(ParseError { offset: off, message: format!("unexpected token `{tok:?}`") })
            }
            None => Err(ParseError { offset: off, message: "unexpected end of input".into() }),
        }
    }

    fn ident_atom(&mut self, name: &str, off: usize) -> Result<Expr, ParseError> {
        match name {
            "x" => return Ok(Expr::Var(Var::X)),
            "sqrt" | "exp" | "log" | "sin" | "cos" => {
                self.expect(Tok::LParen, "`(` after function name")?;
                let arg = self.expr()?;
                self.expect(Tok::RParen, "closing `)`")?;
                return Ok(match name {
                    "sqrt" => sqrt(arg),
                    "exp" => exp(arg),
                    "log" => log(arg),
                    "sin" => sin(arg),
                    _ => cos(arg),
                });
            }
            _ => {}
        }
        if let Some(rest) = name.strip_prefix('y') {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                let k: usize = rest.parse().map_err(|_| ParseError {
                    offset: off,
                    message: format!("variable index out of range in `{name}`"),
                })?;
                if k == 0 {
                    return Err(ParseError {
                        offset: off,
                        message: "lower-level variables are numbered from y1".into(),
                    });
                }
                return Ok(Expr::Var(Var::Y(k - 1)));
            }
        }
        Err(ParseError { offset: off, message: format!("unknown identifier `{name}`") })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        parse_expr(s).unwrap()
    }

    #[test]
    fn parses_and_prints_basic_forms() {
        assert_eq!(p("x + y1").to_string(), "x + y1");
        assert_eq!(p("x+y1*y2").to_string(), "x + y1 * y2");
        assert_eq!(p("(x+y1)*y2").to_string(), "(x + y1) * y2");
        assert_eq!(p("y1^2 + y2^2 - x").to_string(), "y1^2 + y2^2 - x");
        assert_eq!(p("-y1").to_string(), "-y1");
        assert_eq!(parse_expr("a/b").unwrap_err().offset, 0);
    }

    #[test]
    fn reports_offset_of_truncated_input() {
        let e = parse_expr("y1 +").unwrap_err();
        assert_eq!(e.offset, 4);
    }

    #[test]
    fn rejects_unknown_identifiers_and_y0() {
        assert!(parse_expr("z + 1").is_err());
        let e = parse_expr("y0 + 1").unwrap_err();
        assert_eq!(e.offset, 0);
        assert!(parse_expr("x + foo(2)").is_err());
    }

    #[test]
    fn scientific_notation_and_decimals() {
        assert_eq!(p("1e-8").eval(0.0, &[]).unwrap(), 1e-8);
        assert_eq!(p("2.5E2").eval(0.0, &[]).unwrap(), 250.0);
        assert_eq!(p(".5").eval(0.0, &[]).unwrap(), 0.5);
    }

    #[test]
    fn precedence_matches_convention() {
        // Unary minus binds looser than `^`.
        assert_eq!(p("-x^2").eval(3.0, &[]).unwrap(), -9.0);
        // `^` is right-associative.
        assert_eq!(p("2^3^2").eval(0.0, &[]).unwrap(), 512.0);
        // `a^-1` allows a signed exponent without parentheses.
        assert_eq!(p("2^-1").eval(0.0, &[]).unwrap(), 0.5);
        assert_eq!(p("6 - 2 - 1").eval(0.0, &[]).unwrap(), 3.0);
        assert_eq!(p("12 / 2 / 3").eval(0.0, &[]).unwrap(), 2.0);
    }

    #[test]
    fn constant_folding_only() {
        assert_eq!(p("2*3 + x"), Expr::Add(Arc::new(Expr::Const(6.0)), Arc::new(Expr::Var(Var::X))));
        // Folding never manufactures a domain error or hides one.
        assert!(matches!(p("log(0-1)"), Expr::Log(_)));
        assert!(matches!(p("1/0"), Expr::Div(..)));
        // sin(x)^2 + cos(x)^2 is NOT folded to 1.
        let e = p("sin(x)^2 + cos(x)^2");
        assert!(matches!(e, Expr::Add(..)));
    }

    #[test]
    fn derivative_of_circle_constraint() {
        let g = p("y1^2 + y2^2 - x");
        let d1 = g.differentiate(Var::Y(0));
        let d2 = g.differentiate(Var::Y(1));
        let dx = g.differentiate(Var::X);
        for (y1, y2) in [(0.3, -0.7), (1.0, 2.0), (0.0, 0.0)] {
            assert_eq!(d1.eval(0.0, &[y1, y2]).unwrap(), 2.0 * y1);
            assert_eq!(d2.eval(0.0, &[y1, y2]).unwrap(), 2.0 * y2);
            assert_eq!(dx.eval(0.0, &[y1, y2]).unwrap(), -1.0);
        }
    }

    #[test]
    fn derivative_chain_rules() {
        let cases = [
            "sqrt(x^2 + 1)",
            "exp(2*x)",
            "log(x^2 + 1)",
            "sin(x) * cos(x)",
            "x^2.5",
            "(x + 1)^3",
            "x / (x + 2)",
            "exp(sin(x) + x^2)",
        ];
        for src in cases {
            let e = p(src);
            let d = e.differentiate(Var::X);
            for k in 0..7 {
                let x = 0.17 + 0.31 * k as f64;
                let h = 1e-6 * (1.0 + x.abs());
                let fd = (e.eval(x + h, &[]).unwrap() - e.eval(x - h, &[]).unwrap()) / (2.0 * h);
                let sym = d.eval(x, &[]).unwrap();
                assert!(
                    (fd - sym).abs() <= 1e-6 * (1.0 + sym.abs()),
                    "{src}: fd {fd} vs sym {sym} at x={x}"
                );
            }
        }
    }

    #[test]
    fn eval_domain_errors() {
        assert_eq!(p("log(x)").eval(0.0, &[]).unwrap_err().kind, EvalErrorKind::LogNonPositive);
        assert_eq!(p("sqrt(x)").eval(-1.0, &[]).unwrap_err().kind, EvalErrorKind::SqrtNegative);
        assert_eq!(p("1/x").eval(0.0, &[]).unwrap_err().kind, EvalErrorKind::DivisionByZero);
        assert_eq!(p("x^0.5").eval(-2.0, &[]).unwrap_err().kind, EvalErrorKind::PowDomain);
        assert_eq!(p("x^-2").eval(0.0, &[]).unwrap_err().kind, EvalErrorKind::PowDomain);
        // Integer exponents are fine on negative bases.
        assert_eq!(p("x^3").eval(-2.0, &[]).unwrap(), -8.0);
        let err = p("exp(x)").eval(1000.0, &[]).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::NonFinite);
        assert_eq!(err.subexpr, "exp(x)");
    }

    #[test]
    fn error_carries_offending_subexpression() {
        let e = p("x + 1/(y1 - y1)");
        let err = e.eval(1.0, &[2.0]).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::DivisionByZero);
        assert_eq!(err.subexpr, "1 / (y1 - y1)");
    }

    #[test]
    fn print_parse_print_is_fixed_point() {
        let cases = [
            "x + y1 + y2",
            "-(x + y1) * y2",
            "x - (y1 - y2)",
            "x / (y1 * y2)",
            "(-x)^2",
            "-x^2",
            "2^-x",
            "x^y1^2",
            "(x^y1)^2",
            "sqrt(exp(x) + 1) * sin(y1) / cos(y2)",
            "x * -y1",
            "0.00000001 * x",
            "-2.5 + x",
        ];
        for src in cases {
            let once = p(src).to_string();
            let twice = p(&once).to_string();
            assert_eq!(once, twice, "not canonical for {src}");
            assert_eq!(p(&once), p(&twice));
        }
    }

    #[test]
    fn second_derivatives_are_symmetric_in_value() {
        let e = p("exp(y1 * y2) + y1^3 * x + sin(y2)");
        let h = hessian_yy(&e, 2);
        for (x, y1, y2) in [(0.5, 0.3, -0.2), (1.0, -1.0, 0.7)] {
            let a = h[0][1].eval(x, &[y1, y2]).unwrap();
            let b = h[1][0].eval(x, &[y1, y2]).unwrap();
            assert_eq!(a, b);
        }
    }
}
