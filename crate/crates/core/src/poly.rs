//! Sparse real polynomials in six variables.
//!
//! A [`PolyExpr`] maps exponent tuples to coefficients. The six slots are named
//! `x, y, a, b, c, eps` when parsed or printed, but the same type is reused for
//! chart coordinates, where the slots simply stand for the six chart variables.
//! All operations are exact term manipulations; floating point only enters
//! through the coefficients.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Number of variable slots.
pub const NVARS: usize = 6;

/// Exponent tuple, one entry per variable slot.
pub type Exponent = [u8; NVARS];

/// Largest exponent accepted by the parser.
pub const MAX_PARSE_EXPONENT: u32 = 15;

/// The named variables of the original phase space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
    A,
    B,
    C,
    Eps,
}

impl Var {
    pub const ALL: [Var; NVARS] = [Var::X, Var::Y, Var::A, Var::B, Var::C, Var::Eps];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
            Var::A => "a",
            Var::B => "b",
            Var::C => "c",
            Var::Eps => "eps",
        }
    }

    pub fn from_name(name: &str) -> Option<Var> {
        match name {
            "x" => Some(Var::X),
            "y" => Some(Var::Y),
            "a" => Some(Var::A),
            "b" => Some(Var::B),
            "c" => Some(Var::C),
            "eps" | "ε" => Some(Var::Eps),
            _ => None,
        }
    }
}

/// Errors raised by [`parse_poly`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{name}` at byte {offset}")]
    UnknownVariable { offset: usize, name: String },
    #[error("exponent {exponent} at byte {offset} exceeds the maximum of {MAX_PARSE_EXPONENT}")]
    ExponentOverflow { offset: usize, exponent: u64 },
}

/// Failure of an exact division by a monomial.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("polynomial is not divisible by the monomial: term {exponent:?} has coefficient {coefficient:e}")]
pub struct NotDivisible {
    pub exponent: Exponent,
    pub coefficient: f64,
}

/// Sparse polynomial: exponent tuple -> nonzero coefficient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolyExpr {
    terms: BTreeMap<Exponent, f64>,
}

impl PolyExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::monomial(c, [0; NVARS])
    }

    pub fn monomial(coef: f64, exps: Exponent) -> Self {
        let mut p = Self::zero();
        p.add_term(exps, coef);
        p
    }

    /// The polynomial consisting of the single variable in slot `slot`.
    pub fn slot(slot: usize) -> Self {
        let mut e = [0; NVARS];
        e[slot] = 1;
        Self::monomial(1.0, e)
    }

    pub fn var(v: Var) -> Self {
        Self::slot(v.index())
    }

    pub fn from_terms<I: IntoIterator<Item = (Exponent, f64)>>(terms: I) -> Self {
        let mut p = Self::zero();
        for (e, c) in terms {
            p.add_term(e, c);
        }
        p
    }

    /// Adds `coef · m_e` in place, removing the term if it cancels to zero.
    pub fn add_term(&mut self, exps: Exponent, coef: f64) {
        if coef == 0.0 {
            return;
        }
        let entry = self.terms.entry(exps).or_insert(0.0);
        *entry += coef;
        if *entry == 0.0 {
            self.terms.remove(&exps);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponent, &f64)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, exps: &Exponent) -> f64 {
        self.terms.get(exps).copied().unwrap_or(0.0)
    }

    /// Value at the origin, i.e. the constant coefficient.
    pub fn constant_term(&self) -> f64 {
        self.coefficient(&[0; NVARS])
    }

    /// Total degree (0 for the zero polynomial).
    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().map(|&k| k as u32).sum())
            .max()
            .unwrap_or(0)
    }

    /// Largest exponent of slot `slot` over all terms.
    pub fn degree_in(&self, slot: usize) -> u8 {
        self.terms.keys().map(|e| e[slot]).max().unwrap_or(0)
    }

    /// Largest absolute coefficient.
    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// True when no term involves slot `slot`.
    pub fn is_free_of(&self, slot: usize) -> bool {
        self.terms.keys().all(|e| e[slot] == 0)
    }

    pub fn eval(&self, v: &[f64; NVARS]) -> f64 {
        let mut sum = 0.0;
        for (e, c) in &self.terms {
            let mut t = *c;
            for k in 0..NVARS {
                if e[k] != 0 {
                    t *= v[k].powi(e[k] as i32);
                }
            }
            sum += t;
        }
        sum
    }

    /// Evaluates a polynomial that only uses the leading `n` slots.
    pub fn eval_slice(&self, v: &[f64]) -> f64 {
        let mut full = [0.0; NVARS];
        full[..v.len()].copy_from_slice(v);
        self.eval(&full)
    }

    pub fn scale(&self, s: f64) -> Self {
        if s == 0.0 {
            return Self::zero();
        }
        Self {
            terms: self.terms.iter().map(|(e, c)| (*e, c * s)).collect(),
        }
    }

    /// Exact partial derivative with respect to slot `slot`.
    pub fn differentiate_slot(&self, slot: usize) -> Self {
        let mut out = Self::zero();
        for (e, c) in &self.terms {
            if e[slot] > 0 {
                let mut f = *e;
                f[slot] -= 1;
                out.add_term(f, c * e[slot] as f64);
            }
        }
        out
    }

    pub fn differentiate(&self, v: Var) -> Self {
        self.differentiate_slot(v.index())
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut acc = Self::constant(1.0);
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    /// Substitutes `subs[k]` for slot `k` in every term.
    pub fn compose(&self, subs: &[PolyExpr; NVARS]) -> Self {
        let mut powers: Vec<Vec<PolyExpr>> = (0..NVARS)
            .map(|k| {
                let max = self.degree_in(k) as usize;
                let mut v = Vec::with_capacity(max + 1);
                v.push(Self::constant(1.0));
                for i in 1..=max {
                    let next = &v[i - 1] * &subs[k];
                    v.push(next);
                }
                v
            })
            .collect();
        let mut out = Self::zero();
        for (e, c) in &self.terms {
            let mut t = Self::constant(*c);
            for k in 0..NVARS {
                if e[k] > 0 {
                    t = &t * &powers[k][e[k] as usize];
                }
            }
            out = &out + &t;
        }
        powers.clear();
        out
    }

    /// Divides by `slot^k` exactly.
    ///
    /// Terms whose exponent in `slot` is below `k` must be numerical dust: their
    /// coefficients may not exceed `rel_tol` times the largest coefficient, and
    /// they are discarded. Anything larger is reported as [`NotDivisible`].
    pub fn div_monomial(&self, slot: usize, k: u8, rel_tol: f64) -> Result<Self, NotDivisible> {
        let scale = self.max_abs_coefficient();
        let mut out = Self::zero();
        for (e, c) in &self.terms {
            if e[slot] >= k {
                let mut f = *e;
                f[slot] -= k;
                out.add_term(f, *c);
            } else if c.abs() > rel_tol * scale {
                return Err(NotDivisible {
                    exponent: *e,
                    coefficient: *c,
                });
            }
        }
        Ok(out)
    }

    /// Drops terms whose coefficient is at most `rel_tol` times the largest one.
    pub fn prune(&self, rel_tol: f64) -> Self {
        let scale = self.max_abs_coefficient();
        Self {
            terms: self
                .terms
                .iter()
                .filter(|(_, c)| c.abs() > rel_tol * scale)
                .map(|(e, c)| (*e, *c))
                .collect(),
        }
    }

    /// True when every coefficient agrees with `other` to within `tol`.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        (self - other).max_abs_coefficient() <= tol
    }

    /// Renders the polynomial with custom slot names.
    pub fn display_with(&self, names: &[&str; NVARS]) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (i, (e, c)) in self.terms.iter().rev().enumerate() {
            let neg = *c < 0.0;
            let mag = c.abs();
            if i == 0 {
                if neg {
                    out.push('-');
                }
            } else {
                out.push_str(if neg { " - " } else { " + " });
            }
            let mut factors: Vec<String> = Vec::new();
            for k in 0..NVARS {
                match e[k] {
                    0 => {}
                    1 => factors.push(names[k].to_string()),
                    p => factors.push(format!("{}^{}", names[k], p)),
                }
            }
            if factors.is_empty() || mag != 1.0 {
                factors.insert(0, format!("{mag}"));
            }
            out.push_str(&factors.join("*"));
        }
        out
    }
}

impl fmt::Display for PolyExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_with(&["x", "y", "a", "b", "c", "eps"]))
    }
}

impl Add for &PolyExpr {
    type Output = PolyExpr;
    fn add(self, rhs: &PolyExpr) -> PolyExpr {
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(*e, *c);
        }
        out
    }
}

impl Sub for &PolyExpr {
    type Output = PolyExpr;
    fn sub(self, rhs: &PolyExpr) -> PolyExpr {
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(*e, -c);
        }
        out
    }
}

impl Mul for &PolyExpr {
    type Output = PolyExpr;
    fn mul(self, rhs: &PolyExpr) -> PolyExpr {
        let mut out = PolyExpr::zero();
        for (e1, c1) in &self.terms {
            for (e2, c2) in &rhs.terms {
                let mut e = [0u8; NVARS];
                for k in 0..NVARS {
                    e[k] = e1[k] + e2[k];
                }
                out.add_term(e, c1 * c2);
            }
        }
        out
    }
}

impl Neg for &PolyExpr {
    type Output = PolyExpr;
    fn neg(self) -> PolyExpr {
        self.scale(-1.0)
    }
}

impl Add for PolyExpr {
    type Output = PolyExpr;
    fn add(self, rhs: PolyExpr) -> PolyExpr {
        &self + &rhs
    }
}

impl Sub for PolyExpr {
    type Output = PolyExpr;
    fn sub(self, rhs: PolyExpr) -> PolyExpr {
        &self - &rhs
    }
}

impl Mul for PolyExpr {
    type Output = PolyExpr;
    fn mul(self, rhs: PolyExpr) -> PolyExpr {
        &self * &rhs
    }
}

impl Neg for PolyExpr {
    type Output = PolyExpr;
    fn neg(self) -> PolyExpr {
        self.scale(-1.0)
    }
}

/// Parses a sum of signed monomials over `x, y, a, b, c, eps`.
///
/// Grammar: `poly := ['+'|'-'] term (('+'|'-') term)*`,
/// `term := factor ('*' factor)*`, `factor := number | var ['^' integer]`.
/// Numbers are decimal with an optional exponent part (`1.5e-3`).
pub fn parse_poly(src: &str) -> Result<PolyExpr, ParseError> {
    Parser { src, pos: 0 }.parse()
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn skip_ws(&mut self) {
        while let Some(ch) = self.peek() {
            if ch.is_whitespace() {
                self.pos += ch.len_utf8();
            } else {
                break;
            }
        }
    }

    fn syntax(&self, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn parse(mut self) -> Result<PolyExpr, ParseError> {
        let mut out = PolyExpr::zero();
        self.skip_ws();
        if self.peek().is_none() {
            return Err(self.syntax("empty expression"));
        }
        let mut sign = 1.0;
        match self.peek() {
            Some('-') => {
                sign = -1.0;
                self.pos += 1;
            }
            Some('+') => self.pos += 1,
            _ => {}
        }
        loop {
            let (e, c) = self.term()?;
            out.add_term(e, sign * c);
            self.skip_ws();
            match self.peek() {
                None => break,
                Some('+') => {
                    sign = 1.0;
                    self.pos += 1;
                }
                Some('-') => {
                    sign = -1.0;
                    self.pos += 1;
                }
                Some(ch) => return Err(self.syntax(format!("unexpected character `{ch}`"))),
            }
        }
        Ok(out)
    }

    fn term(&mut self) -> Result<(Exponent, f64), ParseError> {
        let mut exps = [0u8; NVARS];
        let mut coef = 1.0;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(ch) if ch.is_ascii_digit() || ch == '.' => coef *= self.number()?,
                Some(ch) if ch.is_alphabetic() || ch == '_' => {
                    let start = self.pos;
                    let name = self.ident();
                    let var = Var::from_name(name).ok_or_else(|| ParseError::UnknownVariable {
                        offset: start,
                        name: name.to_string(),
                    })?;
                    self.skip_ws();
                    let mut power: u64 = 1;
                    if self.peek() == Some('^') {
                        self.pos += 1;
                        self.skip_ws();
                        let at = self.pos;
                        power = self.integer()?;
                        if power > MAX_PARSE_EXPONENT as u64 {
                            return Err(ParseError::ExponentOverflow {
                                offset: at,
                                exponent: power,
                            });
                        }
                    }
                    let slot = &mut exps[var.index()];
                    let total = *slot as u64 + power;
                    if total > MAX_PARSE_EXPONENT as u64 {
                        return Err(ParseError::ExponentOverflow {
                            offset: start,
                            exponent: total,
                        });
                    }
                    *slot = total as u8;
                }
                Some(ch) => return Err(self.syntax(format!("expected a number or variable, found `{ch}`"))),
                None => return Err(self.syntax("expected a number or variable, found end of input")),
            }
            self.skip_ws();
            if self.peek() == Some('*') {
                self.pos += 1;
            } else {
                break;
            }
        }
        Ok((exps, coef))
    }

    fn ident(&mut self) -> &'a str {
        let start = self.pos;
        while let Some(ch) = self.peek() {
            if ch.is_alphanumeric() || ch == '_' {
                self.pos += ch.len_utf8();
            } else {
                break;
            }
        }
        &self.src[start..self.pos]
    }

    fn integer(&mut self) -> Result<u64, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(ch) if ch.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.syntax("expected an integer exponent"));
        }
        self.src[start..self.pos]
            .parse::<u64>()
            .map_err(|_| ParseError::ExponentOverflow {
                offset: start,
                exponent: u64::MAX,
            })
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut i = self.pos;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            if j < bytes.len() && bytes[j].is_ascii_digit() {
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        self.pos = i;
        let text = &self.src[start..i];
        let value = text.parse::<f64>().map_err(|_| ParseError::Syntax {
            offset: start,
            message: format!("malformed number `{text}`"),
        })?;
        if matches!(self.peek(), Some(ch) if ch.is_alphabetic()) {
            return Err(self.syntax("expected `*` between a number and a variable"));
        }
        Ok(value)
    }
}

/// Exact Jacobian `∂map_i/∂slot_j` of an `n`-component map in the leading `n` slots.
pub fn jacobian(map: &[PolyExpr]) -> Vec<Vec<PolyExpr>> {
    let n = map.len();
    map.iter()
        .map(|p| (0..n).map(|j| p.differentiate_slot(j)).collect())
        .collect()
}

/// Determinant and adjugate of a square polynomial matrix (size ≤ 8).
///
/// Minors are computed by Laplace expansion with memoization over
/// (row set, column set) pairs, so every cofactor is an exact polynomial.
/// The adjugate satisfies `adj · M = M · adj = det · I`.
pub fn det_and_adjugate(m: &[Vec<PolyExpr>]) -> (PolyExpr, Vec<Vec<PolyExpr>>) {
    let n = m.len();
    assert!(n <= 8 && m.iter().all(|row| row.len() == n));
    let full: u16 = (1u16 << n) - 1;
    let mut memo: HashMap<(u16, u16), PolyExpr> = HashMap::new();
    let mut adj = vec![vec![PolyExpr::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let minor = minor_det(m, full & !(1 << i), full & !(1 << j), &mut memo);
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            adj[j][i] = minor.scale(sign);
        }
    }
    let mut det = PolyExpr::zero();
    for j in 0..n {
        det = &det + &(&m[0][j] * &adj[j][0]);
    }
    (det, adj)
}

fn minor_det(m: &[Vec<PolyExpr>], rows: u16, cols: u16, memo: &mut HashMap<(u16, u16), PolyExpr>) -> PolyExpr {
    if rows == 0 {
        return PolyExpr::constant(1.0);
    }
    if let Some(p) = memo.get(&(rows, cols)) {
        return p.clone();
    }
    let r = rows.trailing_zeros() as usize;
    let rest = rows & !(1 << r);
    let mut acc = PolyExpr::zero();
    let mut position = 0;
    for j in 0..m.len() {
        if cols & (1 << j) == 0 {
            continue;
        }
        if !m[r][j].is_zero() {
            let sub = minor_det(m, rest, cols & !(1 << j), memo);
            let term = &m[r][j] * &sub;
            acc = if position % 2 == 0 { &acc + &term } else { &acc - &term };
        }
        position += 1;
    }
    memo.insert((rows, cols), acc.clone());
    acc
}
