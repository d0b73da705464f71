//! Truncated multivariate jets.
//!
//! Exact jets come from truncated power-series arithmetic: polynomials,
//! quotients and `sin`/`cos`/`exp` compositions are expanded around the base
//! point, so no finite differencing is involved. Opaque callables fall back
//! to tensor-product central stencils and are flagged approximate.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Exponent vector `α`, one entry per variable.
pub type MultiIndex = Vec<u32>;

/// Highest jet order accepted unless the caller raises the cap.
pub const DEFAULT_ORDER_CAP: u32 = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JetError {
    #[error("denominator vanishes at {point:?}")]
    PoleAtPoint { point: Vec<f64> },
    #[error("jet order {order} exceeds the cap {cap}")]
    OrderTooHigh { order: u32, cap: u32 },
    #[error("jets have different base points")]
    BasePointMismatch,
    #[error("function takes {expected} variables, got {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("non-finite value at {point:?}")]
    NonFinite { point: Vec<f64> },
    #[error("finite-difference step must be positive")]
    InvalidStep,
    #[error("cannot parse expression: {0}")]
    Parse(String),
}

pub fn multi_indices(n: usize, d: u32) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for total in 0..=d {
        let mut cur = vec![0u32; n];
        fill_degree(&mut cur, 0, total, &mut out);
    }
    out
}

// Lexicographically descending within a fixed total degree.
fn fill_degree(cur: &mut MultiIndex, pos: usize, left: u32, out: &mut Vec<MultiIndex>) {
    if pos + 1 == cur.len() {
        cur[pos] = left;
        out.push(cur.clone());
        return;
    }
    if cur.is_empty() {
        if left == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for k in (0..=left).rev() {
        cur[pos] = k;
        fill_degree(cur, pos + 1, left - k, out);
    }
    cur[pos] = 0;
}

pub fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// `α!` for a multi-index.
pub fn multi_factorial(alpha: &[u32]) -> f64 {
    alpha.iter().map(|&a| factorial(a)).product()
}

// ---------------------------------------------------------------------------
// Polynomials

/// Real multivariate polynomial, sparse in the monomial basis.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MPoly {
    nvars: usize,
    terms: BTreeMap<MultiIndex, f64>,
}

impl MPoly {
    pub fn zero(nvars: usize) -> Self {
        MPoly { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    /// The coordinate `y_{i+1}` (zero-based `i`).
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Self::monomial(e, 1.0)
    }

    pub fn monomial(exponents: MultiIndex, c: f64) -> Self {
        let mut p = Self::zero(exponents.len());
        p.add_term(exponents, c);
        p
    }

    pub fn from_terms(nvars: usize, terms: impl IntoIterator<Item = (MultiIndex, f64)>) -> Self {
        let mut p = Self::zero(nvars);
        for (e, c) in terms {
            assert_eq!(e.len(), nvars, "exponent length");
            p.add_term(e, c);
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn add_term(&mut self, exponents: MultiIndex, c: f64) {
        if c == 0.0 {
            return;
        }
        let slot = self.terms.entry(exponents.clone()).or_insert(0.0);
        *slot += c;
        if *slot == 0.0 {
            self.terms.remove(&exponents);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(e, &c)| (e, c))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn coefficient(&self, exponents: &[u32]) -> f64 {
        self.terms.get(exponents).copied().unwrap_or(0.0)
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(y).map(|(&k, &v)| v.powi(k as i32)).product::<f64>())
            .sum()
    }

    /// Sum of `|c y^α|`; the magnitude against which cancellation is judged.
    pub fn eval_abs(&self, y: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                (c * e.iter().zip(y).map(|(&k, &v)| v.powi(k as i32)).product::<f64>()).abs()
            })
            .sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_terms(self.nvars, self.terms.iter().map(|(e, c)| (e.clone(), c * s)))
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut out = Self::constant(self.nvars, 1.0);
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    /// Partial derivative in variable `i`.
    pub fn derivative(&self, i: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, &c) in &self.terms {
            if e[i] > 0 {
                let mut f = e.clone();
                f[i] -= 1;
                out.add_term(f, c * f64::from(e[i]));
            }
        }
        out
    }

    /// Raw derivatives `∂^α p(point)` for `|α| <= d`, by binomial re-expansion.
    fn raw_derivatives(&self, point: &[f64], d: u32) -> HashMap<MultiIndex, f64> {
        let mut out: HashMap<MultiIndex, f64> = HashMap::new();
        for (beta, &c) in &self.terms {
            let mut alpha = vec![0u32; beta.len()];
            'odometer: loop {
                let total: u32 = alpha.iter().sum();
                if total <= d {
                    let mut v = c;
                    for i in 0..beta.len() {
                        v *= binomial(beta[i], alpha[i])
                            * point[i].powi((beta[i] - alpha[i]) as i32);
                    }
                    *out.entry(alpha.clone()).or_insert(0.0) += v * multi_factorial(&alpha);
                }
                let mut pos = 0;
                loop {
                    if pos == beta.len() {
                        break 'odometer;
                    }
                    if alpha[pos] < beta[pos] {
                        alpha[pos] += 1;
                        break;
                    }
                    alpha[pos] = 0;
                    pos += 1;
                }
            }
        }
        out
    }
}

impl std::ops::Add for &MPoly {
    type Output = MPoly;
    fn add(self, rhs: &MPoly) -> MPoly {
        let mut out = self.clone();
        for (e, &c) in &rhs.terms {
            out.add_term(e.clone(), c);
        }
        out
    }
}

impl std::ops::Sub for &MPoly {
    type Output = MPoly;
    fn sub(self, rhs: &MPoly) -> MPoly {
        let mut out = self.clone();
        for (e, &c) in &rhs.terms {
            out.add_term(e.clone(), -c);
        }
        out
    }
}

impl std::ops::Mul for &MPoly {
    type Output = MPoly;
    fn mul(self, rhs: &MPoly) -> MPoly {
        assert_eq!(self.nvars, rhs.nvars, "polynomial arity");
        let mut out = MPoly::zero(self.nvars);
        for (a, &ca) in &self.terms {
            for (b, &cb) in &rhs.terms {
                let e: MultiIndex = a.iter().zip(b).map(|(x, y)| x + y).collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }
}

impl fmt::Display for MPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_named(f, &|i| format!("y{}", i + 1))
    }
}

impl MPoly {
    /// Renders with custom variable names, e.g. `["x", "y"]`.
    pub fn display_with(&self, names: &[&str]) -> String {
        let mut out = String::new();
        let _ = self.write_named(&mut out, &|i| {
            names.get(i).map_or_else(|| format!("y{}", i + 1), |s| s.to_string())
        });
        out
    }

    fn write_named(&self, f: &mut dyn fmt::Write, name: &dyn Fn(usize) -> String) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, &c) in self.terms.iter().rev() {
            let sign = if c < 0.0 { "-" } else { "+" };
            if first {
                if c < 0.0 {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            first = false;
            let mag = c.abs();
            let is_const = e.iter().all(|&k| k == 0);
            if mag != 1.0 || is_const {
                write!(f, "{mag}")?;
                if !is_const {
                    write!(f, "*")?;
                }
            }
            let mut first_var = true;
            for (i, &k) in e.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                if !first_var {
                    write!(f, "*")?;
                }
                first_var = false;
                write!(f, "{}", name(i))?;
                if k > 1 {
                    write!(f, "^{k}")?;
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Expressions

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Sin,
    Cos,
    Exp,
}

/// Whitelisted analytic expression in the target coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based coordinate index.
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Call(Primitive, Box<Expr>),
}

impl Expr {
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.max_var(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                match (a.max_var(), b.max_var()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
        }
    }

    /// Polynomial form, when the expression has no division or primitive.
    pub fn to_poly(&self, nvars: usize) -> Option<MPoly> {
        Some(match self {
            Expr::Const(c) => MPoly::constant(nvars, *c),
            Expr::Var(i) if *i < nvars => MPoly::var(nvars, *i),
            Expr::Var(_) => return None,
            Expr::Neg(a) => a.to_poly(nvars)?.scale(-1.0),
            Expr::Add(a, b) => &a.to_poly(nvars)? + &b.to_poly(nvars)?,
            Expr::Sub(a, b) => &a.to_poly(nvars)? - &b.to_poly(nvars)?,
            Expr::Mul(a, b) => &a.to_poly(nvars)? * &b.to_poly(nvars)?,
            Expr::Pow(a, k) => a.to_poly(nvars)?.pow(*k),
            Expr::Div(a, b) => {
                let den = b.to_poly(nvars)?;
                let c = den.coefficient(&vec![0; nvars]);
                if den.degree() == 0 && c != 0.0 {
                    a.to_poly(nvars)?.scale(1.0 / c)
                } else {
                    return None;
                }
            }
            Expr::Call(..) => return None,
        })
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => y[*i],
            Expr::Neg(a) => -a.eval(y),
            Expr::Add(a, b) => a.eval(y) + b.eval(y),
            Expr::Sub(a, b) => a.eval(y) - b.eval(y),
            Expr::Mul(a, b) => a.eval(y) * b.eval(y),
            Expr::Div(a, b) => a.eval(y) / b.eval(y),
            Expr::Pow(a, k) => a.eval(y).powi(*k as i32),
            Expr::Call(Primitive::Sin, a) => a.eval(y).sin(),
            Expr::Call(Primitive::Cos, a) => a.eval(y).cos(),
            Expr::Call(Primitive::Exp, a) => a.eval(y).exp(),
        }
    }

    fn series(&self, ctx: &TpsContext, point: &[f64]) -> Result<Tps, JetError> {
        Ok(match self {
            Expr::Const(c) => ctx.constant(*c),
            Expr::Var(i) => ctx.variable(*i, point[*i]),
            Expr::Neg(a) => a.series(ctx, point)?.scaled(-1.0),
            Expr::Add(a, b) => a.series(ctx, point)?.add(&b.series(ctx, point)?),
            Expr::Sub(a, b) => a.series(ctx, point)?.add(&b.series(ctx, point)?.scaled(-1.0)),
            Expr::Mul(a, b) => ctx.mul(&a.series(ctx, point)?, &b.series(ctx, point)?),
            Expr::Div(a, b) => {
                let den = b.series(ctx, point)?;
                let magnitude = b.eval_abs(point);
                let inv = ctx.reciprocal(&den, magnitude, point)?;
                ctx.mul(&a.series(ctx, point)?, &inv)
            }
            Expr::Pow(a, k) => {
                let base = a.series(ctx, point)?;
                let mut out = ctx.constant(1.0);
                for _ in 0..*k {
                    out = ctx.mul(&out, &base);
                }
                out
            }
            Expr::Call(prim, a) => ctx.primitive(*prim, &a.series(ctx, point)?),
        })
    }

    // Magnitude used to decide whether a denominator vanishes.
    fn eval_abs(&self, y: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => c.abs(),
            Expr::Var(i) => y[*i].abs(),
            Expr::Neg(a) => a.eval_abs(y),
            Expr::Add(a, b) | Expr::Sub(a, b) => a.eval_abs(y) + b.eval_abs(y),
            Expr::Mul(a, b) => a.eval_abs(y) * b.eval_abs(y),
            Expr::Div(a, b) => a.eval_abs(y) / b.eval(y).abs().max(f64::MIN_POSITIVE),
            Expr::Pow(a, k) => a.eval_abs(y).powi(*k as i32),
            Expr::Call(Primitive::Exp, a) => a.eval(y).exp(),
            Expr::Call(..) => 1.0,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "y{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "{a}*{b}"),
            Expr::Div(a, b) => write!(f, "{a}/{b}"),
            Expr::Pow(a, k) => write!(f, "{a}^{k}"),
            Expr::Call(p, a) => {
                let name = match p {
                    Primitive::Sin => "sin",
                    Primitive::Cos => "cos",
                    Primitive::Exp => "exp",
                };
                write!(f, "{name}({a})")
            }
        }
    }
}

/// Parses expressions over `y1..yN` (and `y` for `y1`) with `+ - * / ^`,
/// integer powers and `sin`, `cos`, `exp`.
pub fn parse_expr(src: &str) -> Result<Expr, JetError> {
    let tokens = tokenize(src)?;
    let mut parser = Parser { tokens, pos: 0 };
    let e = parser.sum()?;
    if parser.pos != parser.tokens.len() {
        return Err(JetError::Parse(format!("unexpected token {:?}", parser.tokens[parser.pos])));
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<Token>, JetError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text.parse().map_err(|_| JetError::Parse(format!("bad number {text}")))?;
            out.push(Token::Num(v));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else {
            return Err(JetError::Parse(format!("unexpected character {c:?}")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Token::Op(c)) => Some(*c),
            _ => None,
        }
    }

    fn expect(&mut self, op: char) -> Result<(), JetError> {
        if self.peek_op() == Some(op) {
            self.pos += 1;
            Ok(())
        } else {
            Err(JetError::Parse(format!("expected {op:?}")))
        }
    }

    fn sum(&mut self) -> Result<Expr, JetError> {
        let mut lhs = self.product()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.product()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr, JetError> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, JetError> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, JetError> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            match self.tokens.get(self.pos) {
                Some(Token::Num(v)) if v.fract() == 0.0 && *v >= 0.0 && *v <= 64.0 => {
                    let k = *v as u32;
                    self.pos += 1;
                    return Ok(Expr::Pow(Box::new(base), k));
                }
                _ => return Err(JetError::Parse("exponent must be a small nonnegative integer".into())),
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, JetError> {
        let tok = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| JetError::Parse("unexpected end of input".into()))?;
        self.pos += 1;
        match tok {
            Token::Num(v) => Ok(Expr::Const(v)),
            Token::Op('(') => {
                let e = self.sum()?;
                self.expect(')')?;
                Ok(e)
            }
            Token::Ident(name) => {
                let prim = match name.as_str() {
                    "sin" => Some(Primitive::Sin),
                    "cos" => Some(Primitive::Cos),
                    "exp" => Some(Primitive::Exp),
                    _ => None,
                };
                if let Some(p) = prim {
                    self.expect('(')?;
                    let arg = self.sum()?;
                    self.expect(')')?;
                    return Ok(Expr::Call(p, Box::new(arg)));
                }
                if name == "y" {
                    return Ok(Expr::Var(0));
                }
                match name.strip_prefix('y').and_then(|s| s.parse::<usize>().ok()) {
                    Some(i) if i >= 1 => Ok(Expr::Var(i - 1)),
                    _ => Err(JetError::Parse(format!("unknown identifier {name}"))),
                }
            }
            Token::Op(c) => Err(JetError::Parse(format!("unexpected {c:?}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Truncated power series

struct TpsContext {
    n: usize,
    index: HashMap<MultiIndex, usize>,
    degrees: Vec<u32>,
    /// `(i, j, k)` with `α_i + α_j = α_k`.
    products: Vec<(usize, usize, usize)>,
    d: u32,
}

#[derive(Clone)]
struct Tps {
    c: Vec<f64>,
}

impl Tps {
    fn scaled(&self, s: f64) -> Tps {
        Tps { c: self.c.iter().map(|v| v * s).collect() }
    }

    fn add(&self, other: &Tps) -> Tps {
        Tps { c: self.c.iter().zip(&other.c).map(|(a, b)| a + b).collect() }
    }
}

impl TpsContext {
    fn new(n: usize, d: u32) -> Self {
        let indices = multi_indices(n, d);
        let index: HashMap<MultiIndex, usize> =
            indices.iter().cloned().enumerate().map(|(i, a)| (a, i)).collect();
        let degrees: Vec<u32> = indices.iter().map(|a| a.iter().sum()).collect();
        let mut products = Vec::new();
        for (i, a) in indices.iter().enumerate() {
            for (j, b) in indices.iter().enumerate() {
                if degrees[i] + degrees[j] <= d {
                    let s: MultiIndex = a.iter().zip(b).map(|(x, y)| x + y).collect();
                    products.push((i, j, index[&s]));
                }
            }
        }
        TpsContext { n, index, degrees, products, d }
    }

    fn len(&self) -> usize {
        self.degrees.len()
    }

    fn constant(&self, c: f64) -> Tps {
        let mut v = vec![0.0; self.len()];
        v[0] = c;
        Tps { c: v }
    }

    fn variable(&self, i: usize, at: f64) -> Tps {
        let mut t = self.constant(at);
        if self.d >= 1 {
            let mut e = vec![0; self.n];
            e[i] = 1;
            t.c[self.index[&e]] = 1.0;
        }
        t
    }

    fn mul(&self, a: &Tps, b: &Tps) -> Tps {
        let mut out = vec![0.0; self.len()];
        for &(i, j, k) in &self.products {
            out[k] += a.c[i] * b.c[j];
        }
        Tps { c: out }
    }

    /// `Σ_k coeffs[k] u^k` for `u` with zero constant term.
    fn compose(&self, coeffs: &[f64], u: &Tps) -> Tps {
        let mut out = self.constant(0.0);
        for &c in coeffs.iter().rev() {
            out = self.mul(&out, u);
            out.c[0] += c;
        }
        out
    }

    fn reciprocal(&self, den: &Tps, magnitude: f64, point: &[f64]) -> Result<Tps, JetError> {
        let c0 = den.c[0];
        if c0.abs() <= 1e-12 * magnitude.max(1.0) {
            return Err(JetError::PoleAtPoint { point: point.to_vec() });
        }
        let mut u = den.clone();
        u.c[0] = 0.0;
        let coeffs: Vec<f64> = (0..=self.d).map(|k| (-1.0f64).powi(k as i32) / c0.powi(k as i32 + 1)).collect();
        Ok(self.compose(&coeffs, &u))
    }

    fn primitive(&self, prim: Primitive, arg: &Tps) -> Tps {
        let a0 = arg.c[0];
        let mut u = arg.clone();
        u.c[0] = 0.0;
        let d = self.d as usize;
        let inv_fact: Vec<f64> = (0..=d as u32).map(|k| 1.0 / factorial(k)).collect();
        // Taylor coefficients of f(a0 + u) in u.
        let coeffs: Vec<f64> = (0..=d)
            .map(|k| {
                let deriv = match prim {
                    Primitive::Exp => a0.exp(),
                    Primitive::Sin => match k % 4 {
                        0 => a0.sin(),
                        1 => a0.cos(),
                        2 => -a0.sin(),
                        _ => -a0.cos(),
                    },
                    Primitive::Cos => match k % 4 {
                        0 => a0.cos(),
                        1 => -a0.sin(),
                        2 => -a0.cos(),
                        _ => a0.sin(),
                    },
                };
                deriv * inv_fact[k]
            })
            .collect();
        self.compose(&coeffs, &u)
    }
}

// ---------------------------------------------------------------------------
// Function specifications

/// Opaque real function of `n` variables; differentiated numerically.
#[derive(Clone)]
pub struct NumericFn {
    pub arity: usize,
    pub f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for NumericFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NumericFn(arity {})", self.arity)
    }
}

/// Real-valued test function on the target `R^n`.
#[derive(Debug, Clone)]
pub enum FnSpec {
    Polynomial(MPoly),
    Rational { numerator: MPoly, denominator: MPoly },
    /// Composition of whitelisted primitives; differentiated exactly.
    Analytic { arity: usize, expr: Expr },
    /// Black box; jets are finite-difference approximations.
    Numeric(NumericFn),
}

impl FnSpec {
    pub fn poly(p: MPoly) -> Self {
        FnSpec::Polynomial(p)
    }

    /// Parses an expression and picks the most exact representation.
    pub fn parse(src: &str, arity: usize) -> Result<Self, JetError> {
        let expr = parse_expr(src)?;
        if let Some(i) = expr.max_var() {
            if i >= arity {
                return Err(JetError::ArityMismatch { expected: arity, found: i + 1 });
            }
        }
        Ok(match expr.to_poly(arity) {
            Some(p) => FnSpec::Polynomial(p),
            None => FnSpec::Analytic { arity, expr },
        })
    }

    pub fn numeric(arity: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        FnSpec::Numeric(NumericFn { arity, f: Arc::new(f) })
    }

    pub fn arity(&self) -> usize {
        match self {
            FnSpec::Polynomial(p) => p.nvars(),
            FnSpec::Rational { numerator, .. } => numerator.nvars(),
            FnSpec::Analytic { arity, .. } => *arity,
            FnSpec::Numeric(nf) => nf.arity,
        }
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self, FnSpec::Numeric(_))
    }

    pub fn eval(&self, y: &[f64]) -> Result<f64, JetError> {
        self.check_arity(y.len())?;
        let v = match self {
            FnSpec::Polynomial(p) => p.eval(y),
            FnSpec::Rational { numerator, denominator } => {
                let den = denominator.eval(y);
                if den.abs() <= 1e-12 * denominator.eval_abs(y).max(1.0) {
                    return Err(JetError::PoleAtPoint { point: y.to_vec() });
                }
                numerator.eval(y) / den
            }
            FnSpec::Analytic { expr, .. } => expr.eval(y),
            FnSpec::Numeric(nf) => (nf.f)(y),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(JetError::NonFinite { point: y.to_vec() })
        }
    }

    fn check_arity(&self, found: usize) -> Result<(), JetError> {
        let expected = self.arity();
        if expected == found {
            Ok(())
        } else {
            Err(JetError::ArityMismatch { expected, found })
        }
    }
}

// ---------------------------------------------------------------------------
// Jets

/// Raw partial derivatives `∂^α f(p)` for all `|α| <= order`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub base_point: Vec<f64>,
    pub order: u32,
    derivs: BTreeMap<MultiIndex, f64>,
}

impl Jet {
    /// Builds a jet from raw derivative values; missing entries are zero.
    pub fn from_derivs(
        base_point: Vec<f64>,
        order: u32,
        values: impl IntoIterator<Item = (MultiIndex, f64)>,
    ) -> Self {
        let n = base_point.len();
        let mut derivs: BTreeMap<MultiIndex, f64> =
            multi_indices(n, order).into_iter().map(|a| (a, 0.0)).collect();
        for (a, v) in values {
            if let Some(slot) = derivs.get_mut(&a) {
                *slot = v;
            }
        }
        Jet { base_point, order, derivs }
    }

    pub fn arity(&self) -> usize {
        self.base_point.len()
    }

    pub fn get(&self, alpha: &[u32]) -> f64 {
        self.derivs.get(alpha).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.derivs.iter().map(|(a, &v)| (a, v))
    }

    /// Values in graded order, matching [`multi_indices`].
    pub fn values(&self) -> Vec<f64> {
        multi_indices(self.arity(), self.order).iter().map(|a| self.get(a)).collect()
    }

    /// Value of the Taylor polynomial at `y`.
    pub fn taylor_eval(&self, y: &[f64]) -> f64 {
        self.derivs
            .iter()
            .map(|(a, &v)| {
                let mono: f64 = a
                    .iter()
                    .zip(y.iter().zip(&self.base_point))
                    .map(|(&k, (&yi, &pi))| (yi - pi).powi(k as i32))
                    .product();
                v / multi_factorial(a) * mono
            })
            .sum()
    }
}

/// Jet of `f` at `p` through order `d`. `h` is only used for numeric specs;
/// `None` picks `ε^{1/(d+2)}·max(1, |p|)`.
pub fn extract_jet(f: &FnSpec, p: &[f64], d: u32, h: Option<f64>) -> Result<Jet, JetError> {
    extract_jet_capped(f, p, d, h, DEFAULT_ORDER_CAP)
}

pub fn extract_jet_capped(
    f: &FnSpec,
    p: &[f64],
    d: u32,
    h: Option<f64>,
    cap: u32,
) -> Result<Jet, JetError> {
    if d > cap {
        return Err(JetError::OrderTooHigh { order: d, cap });
    }
    f.check_arity(p.len())?;
    if p.iter().any(|v| !v.is_finite()) {
        return Err(JetError::NonFinite { point: p.to_vec() });
    }
    let n = p.len();
    let jet = match f {
        FnSpec::Polynomial(poly) => {
            let raw = poly.raw_derivatives(p, d);
            Jet::from_derivs(p.to_vec(), d, raw)
        }
        FnSpec::Rational { numerator, denominator } => {
            let ctx = TpsContext::new(n, d);
            let den = poly_series(&ctx, denominator, p);
            let inv = ctx.reciprocal(&den, denominator.eval_abs(p), p)?;
            let series = ctx.mul(&poly_series(&ctx, numerator, p), &inv);
            series_to_jet(&ctx, &series, p, d)
        }
        FnSpec::Analytic { expr, .. } => {
            let ctx = TpsContext::new(n, d);
            let series = expr.series(&ctx, p)?;
            series_to_jet(&ctx, &series, p, d)
        }
        FnSpec::Numeric(nf) => numeric_jet(nf, p, d, h)?,
    };
    if jet.derivs.values().any(|v| !v.is_finite()) {
        return Err(JetError::NonFinite { point: p.to_vec() });
    }
    Ok(jet)
}

fn poly_series(ctx: &TpsContext, poly: &MPoly, p: &[f64]) -> Tps {
    let raw = poly.raw_derivatives(p, ctx.d);
    let mut c = vec![0.0; ctx.len()];
    for (a, v) in raw {
        c[ctx.index[&a]] = v / multi_factorial(&a);
    }
    Tps { c }
}

fn series_to_jet(ctx: &TpsContext, s: &Tps, p: &[f64], d: u32) -> Jet {
    let values = ctx
        .index
        .iter()
        .map(|(a, &i)| (a.clone(), s.c[i] * multi_factorial(a)));
    Jet::from_derivs(p.to_vec(), d, values)
}

/// Fornberg weights for the `m`-th derivative at 0 on integer nodes `-q..=q`.
fn stencil_weights(m: usize, q: i32) -> Vec<f64> {
    let nodes: Vec<f64> = (-q..=q).map(f64::from).collect();
    let np = nodes.len();
    // c[j][k]: weight of node j for derivative k
    let mut c = vec![vec![0.0; m + 1]; np];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0];
    for i in 1..np {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i];
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[m]).collect()
}

fn numeric_jet(nf: &NumericFn, p: &[f64], d: u32, h: Option<f64>) -> Result<Jet, JetError> {
    let n = p.len();
    let pmax = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let h = match h {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(_) => return Err(JetError::InvalidStep),
        None => f64::EPSILON.powf(1.0 / (f64::from(d) + 2.0)) * pmax.max(1.0),
    };
    let mut cache: HashMap<Vec<i32>, f64> = HashMap::new();
    let mut sample = |k: &[i32]| -> Result<f64, JetError> {
        if let Some(v) = cache.get(k) {
            return Ok(*v);
        }
        let y: Vec<f64> = p.iter().zip(k).map(|(&pi, &ki)| pi + h * f64::from(ki)).collect();
        let v = (nf.f)(&y);
        if !v.is_finite() {
            return Err(JetError::NonFinite { point: y });
        }
        cache.insert(k.to_vec(), v);
        Ok(v)
    };
    let mut values = Vec::new();
    for alpha in multi_indices(n, d) {
        // per-axis stencils, second-order accurate or better
        let stencils: Vec<(i32, Vec<f64>)> = alpha
            .iter()
            .map(|&m| {
                let q = (m as i32 + 1) / 2 + 1;
                (q, stencil_weights(m as usize, q))
            })
            .collect();
        let mut acc = 0.0;
        let mut k: Vec<i32> = stencils.iter().map(|(q, _)| -q).collect();
        loop {
            let w: f64 = k
                .iter()
                .zip(&stencils)
                .map(|(&ki, (q, ws))| ws[(ki + q) as usize])
                .product();
            if w != 0.0 {
                acc += w * sample(&k)?;
            }
            let mut pos = 0;
            while pos < n {
                if k[pos] < stencils[pos].0 {
                    k[pos] += 1;
                    break;
                }
                k[pos] = -stencils[pos].0;
                pos += 1;
            }
            if pos == n {
                break;
            }
        }
        let total: u32 = alpha.iter().sum();
        values.push((alpha, acc / h.powi(total as i32)));
    }
    Ok(Jet::from_derivs(p.to_vec(), d, values))
}

/// Leibniz rule: `∂^γ(fg) = Σ_{α<=γ} C(γ,α) ∂^α f ∂^{γ-α} g`.
pub fn jet_product(a: &Jet, b: &Jet) -> Result<Jet, JetError> {
    if a.base_point != b.base_point {
        return Err(JetError::BasePointMismatch);
    }
    let n = a.arity();
    let order = a.order.min(b.order);
    let mut values = Vec::new();
    for gamma in multi_indices(n, order) {
        let mut acc = 0.0;
        for alpha in multi_indices(n, gamma.iter().sum()) {
            if alpha.iter().zip(&gamma).any(|(x, g)| x > g) {
                continue;
            }
            let rest: MultiIndex = gamma.iter().zip(&alpha).map(|(g, x)| g - x).collect();
            let weight: f64 = gamma.iter().zip(&alpha).map(|(&g, &x)| binomial(g, x)).product();
            acc += weight * a.get(&alpha) * b.get(&rest);
        }
        values.push((gamma, acc));
    }
    Ok(Jet::from_derivs(a.base_point.clone(), order, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn graded_indices() {
        let idx = multi_indices(2, 2);
        assert_eq!(idx, vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
        assert_eq!(multi_indices(3, 12).len(), 455);
        assert_eq!(multi_indices(0, 3), vec![Vec::<u32>::new()]);
    }

    #[test]
    fn jet_of_monomial() {
        let f = FnSpec::parse("y1^2*y2", 2).unwrap();
        assert!(matches!(f, FnSpec::Polynomial(_)));
        let j = extract_jet(&f, &[1.0, 1.0], 2, None).unwrap();
        let want = [([0, 0], 1.0), ([1, 0], 2.0), ([0, 1], 1.0), ([2, 0], 2.0), ([1, 1], 2.0), ([0, 2], 0.0)];
        for (a, v) in want {
            assert_eq!(j.get(&a), v, "alpha {a:?}");
        }
    }

    #[test]
    fn constant_jet() {
        let f = FnSpec::poly(MPoly::constant(1, 4.5));
        let j = extract_jet(&f, &[0.3], 3, None).unwrap();
        assert_eq!(j.values(), vec![4.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn sine_by_finite_differences() {
        let f = FnSpec::numeric(1, |y| y[0].sin());
        let j = extract_jet(&f, &[0.0], 3, Some(1e-3)).unwrap();
        for (got, want) in j.values().iter().zip([0.0, 1.0, 0.0, -1.0]) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn sine_exact() {
        let f = FnSpec::parse("sin(y)", 1).unwrap();
        let j = extract_jet(&f, &[0.0], 5, None).unwrap();
        for (got, want) in j.values().iter().zip([0.0, 1.0, 0.0, -1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn rational_and_composition() {
        // 1/(1+y)^2 at 0: derivatives (-1)^k (k+1)!
        let f = FnSpec::parse("1/(1+y)^2", 1).unwrap();
        let j = extract_jet(&f, &[0.0], 4, None).unwrap();
        for k in 0..=4u32 {
            let want = (-1f64).powi(k as i32) * factorial(k + 1);
            assert!(close(j.get(&[k]), want, 1e-13));
        }
        // exp(y1*y2) at (0,0): ∂1∂2 = 1, ∂1²∂2² = 2!2!/2 = 2
        let g = FnSpec::parse("exp(y1*y2)", 2).unwrap();
        let j = extract_jet(&g, &[0.0, 0.0], 4, None).unwrap();
        assert!(close(j.get(&[1, 1]), 1.0, 1e-14));
        assert!(close(j.get(&[2, 2]), 2.0, 1e-14));
        assert_eq!(j.get(&[2, 0]), 0.0);
        // cos at a shifted point
        let h = FnSpec::parse("cos(2*y)", 1).unwrap();
        let j = extract_jet(&h, &[0.4], 3, None).unwrap();
        assert!(close(j.get(&[3]), 8.0 * (0.8f64).sin(), 1e-13));
    }

    #[test]
    fn pole_detected() {
        let f = FnSpec::Rational {
            numerator: MPoly::constant(1, 1.0),
            denominator: &MPoly::var(1, 0) - &MPoly::constant(1, 2.0),
        };
        assert!(matches!(extract_jet(&f, &[2.0], 2, None), Err(JetError::PoleAtPoint { .. })));
        assert!(extract_jet(&f, &[1.0], 2, None).is_ok());
        let g = FnSpec::parse("y/(y-1)", 1).unwrap();
        assert!(matches!(extract_jet(&g, &[1.0], 1, None), Err(JetError::PoleAtPoint { .. })));
    }

    #[test]
    fn order_cap() {
        let f = FnSpec::parse("y", 1).unwrap();
        assert_eq!(
            extract_jet(&f, &[0.0], 13, None).unwrap_err(),
            JetError::OrderTooHigh { order: 13, cap: 12 }
        );
    }

    #[test]
    fn product_examples() {
        let y = Jet::from_derivs(vec![0.0], 2, [(vec![1], 1.0)]);
        assert_eq!(jet_product(&y, &y).unwrap().values(), vec![0.0, 0.0, 2.0]);
        let a = Jet::from_derivs(vec![0.0], 1, [(vec![0], 1.0), (vec![1], 1.0)]);
        let b = Jet::from_derivs(vec![0.0], 1, [(vec![0], 1.0), (vec![1], -1.0)]);
        assert_eq!(jet_product(&a, &b).unwrap().values(), vec![1.0, 0.0]);
        let one = Jet::from_derivs(vec![0.0], 1, [(vec![0], 1.0)]);
        assert_eq!(jet_product(&one, &b).unwrap(), b);
        let other = Jet::from_derivs(vec![1.0], 1, []);
        assert_eq!(jet_product(&a, &other).unwrap_err(), JetError::BasePointMismatch);
    }

    #[test]
    fn parser_rejects_garbage() {
        assert!(parse_expr("y1 +").is_err());
        assert!(parse_expr("foo(y)").is_err());
        assert!(parse_expr("y^-1").is_err());
        assert!(matches!(FnSpec::parse("y3", 2), Err(JetError::ArityMismatch { .. })));
        assert_eq!(parse_expr("2e-1*y2").unwrap(), Expr::Mul(Box::new(Expr::Const(0.2)), Box::new(Expr::Var(1))));
    }

    #[test]
    fn display_round_trip() {
        let p = &(&MPoly::var(2, 0).pow(2) * &MPoly::var(2, 1)) - &MPoly::constant(2, 1.5);
        let q = FnSpec::parse(&p.to_string(), 2).unwrap();
        match q {
            FnSpec::Polynomial(q) => assert_eq!(q, p),
            other => panic!("{other:?}"),
        }
    }
}
