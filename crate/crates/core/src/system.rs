//! The fast-slow system
//!
//! ```text
//! x' = x² + a y + b + ε f_x
//! y' = y² + a x + c + ε f_y
//! a' = ε g_a,  b' = ε g_b,  c' = ε g_c
//! ```
//!
//! written in the fast time, together with its gradient potential
//! `V = x³/3 + y³/3 + a x y + b x + c y`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::poly::{parse_poly, ParseError, PolyExpr, Var, NVARS};

/// A point `(x, y, a, b, c)` of phase space together with `ε ≥ 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StateZ {
    pub x: f64,
    pub y: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub eps: f64,
}

impl StateZ {
    pub fn new(x: f64, y: f64, a: f64, b: f64, c: f64) -> Self {
        Self {
            x,
            y,
            a,
            b,
            c,
            eps: 0.0,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    /// `[x, y, a, b, c, ε]`, the slot order used by [`PolyExpr`].
    pub fn to_array(&self) -> [f64; NVARS] {
        [self.x, self.y, self.a, self.b, self.c, self.eps]
    }

    pub fn from_array(v: &[f64; NVARS]) -> Self {
        Self {
            x: v[0],
            y: v[1],
            a: v[2],
            b: v[3],
            c: v[4],
            eps: v[5],
        }
    }

    /// `[x, y, a, b, c]`.
    pub fn phase(&self) -> [f64; 5] {
        [self.x, self.y, self.a, self.b, self.c]
    }

    pub fn from_phase(v: &[f64; 5], eps: f64) -> Self {
        Self {
            x: v[0],
            y: v[1],
            a: v[2],
            b: v[3],
            c: v[4],
            eps,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Slow drifts `g_a, g_b, g_c` and fast perturbations `f_x, f_y`.
///
/// Immutable after construction and therefore freely shareable between threads.
#[derive(Clone, Debug, PartialEq)]
pub struct FastSlowSystem {
    name: String,
    g_a: PolyExpr,
    g_b: PolyExpr,
    g_c: PolyExpr,
    f_x: PolyExpr,
    f_y: PolyExpr,
}

impl FastSlowSystem {
    pub fn new(
        name: impl Into<String>,
        g_a: PolyExpr,
        g_b: PolyExpr,
        g_c: PolyExpr,
        f_x: PolyExpr,
        f_y: PolyExpr,
    ) -> Self {
        Self {
            name: name.into(),
            g_a,
            g_b,
            g_c,
            f_x,
            f_y,
        }
    }

    /// Builds a system from polynomial source strings.
    pub fn from_strs(name: &str, g_a: &str, g_b: &str, g_c: &str, f_x: &str, f_y: &str) -> Result<Self, ParseError> {
        Ok(Self::new(
            name,
            parse_poly(g_a)?,
            parse_poly(g_b)?,
            parse_poly(g_c)?,
            parse_poly(f_x)?,
            parse_poly(f_y)?,
        ))
    }

    /// System with constant slow drift and no fast perturbation.
    pub fn constant(g_a: f64, g_b: f64, g_c: f64) -> Self {
        Self::new(
            format!("g=({g_a},{g_b},{g_c})"),
            PolyExpr::constant(g_a),
            PolyExpr::constant(g_b),
            PolyExpr::constant(g_c),
            PolyExpr::zero(),
            PolyExpr::zero(),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn g_a(&self) -> &PolyExpr {
        &self.g_a
    }

    pub fn g_b(&self) -> &PolyExpr {
        &self.g_b
    }

    pub fn g_c(&self) -> &PolyExpr {
        &self.g_c
    }

    pub fn f_x(&self) -> &PolyExpr {
        &self.f_x
    }

    pub fn f_y(&self) -> &PolyExpr {
        &self.f_y
    }

    /// `g_a(0)`.
    pub fn a0(&self) -> f64 {
        self.g_a.constant_term()
    }

    /// `g_b(0)`.
    pub fn b0(&self) -> f64 {
        self.g_b.constant_term()
    }

    /// `g_c(0)`.
    pub fn c0(&self) -> f64 {
        self.g_c.constant_term()
    }

    /// The full vector field in slot order `(x, y, a, b, c, ε)` as polynomials,
    /// with `ε' = 0`.
    pub fn field_polys(&self) -> [PolyExpr; NVARS] {
        let x = PolyExpr::var(Var::X);
        let y = PolyExpr::var(Var::Y);
        let a = PolyExpr::var(Var::A);
        let b = PolyExpr::var(Var::B);
        let c = PolyExpr::var(Var::C);
        let e = PolyExpr::var(Var::Eps);
        let fx = &(&(&x * &x) + &(&a * &y)) + &(&b + &(&e * &self.f_x));
        let fy = &(&(&y * &y) + &(&a * &x)) + &(&c + &(&e * &self.f_y));
        [fx, fy, &e * &self.g_a, &e * &self.g_b, &e * &self.g_c, PolyExpr::zero()]
    }

    /// Five-dimensional fast-time field with `ε` held fixed.
    pub fn fast_field5(&self, s: &[f64; 5], eps: f64) -> [f64; 5] {
        let v = [s[0], s[1], s[2], s[3], s[4], eps];
        let (x, y, a, b, c) = (s[0], s[1], s[2], s[3], s[4]);
        let (fx, fy) = if eps == 0.0 {
            (0.0, 0.0)
        } else {
            (self.f_x.eval(&v), self.f_y.eval(&v))
        };
        [
            x * x + a * y + b + eps * fx,
            y * y + a * x + c + eps * fy,
            eps * self.g_a.eval(&v),
            eps * self.g_b.eval(&v),
            eps * self.g_c.eval(&v),
        ]
    }
}

/// Fast-time velocity `(x', y', a', b', c', ε')` at `s` for the given `ε`.
pub fn eval_fast_field(sys: &FastSlowSystem, s: &StateZ, eps: f64) -> [f64; NVARS] {
    let v = sys.fast_field5(&s.phase(), eps);
    [v[0], v[1], v[2], v[3], v[4], 0.0]
}

/// Potential value, gradient and Hessian in the fast variables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PotentialEval {
    pub v: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

impl PotentialEval {
    /// `det = 4xy − a²`.
    pub fn det(&self) -> f64 {
        self.hess[0][0] * self.hess[1][1] - self.hess[0][1] * self.hess[1][0]
    }

    pub fn trace(&self) -> f64 {
        self.hess[0][0] + self.hess[1][1]
    }
}

/// `V = x³/3 + y³/3 + axy + bx + cy` with its gradient and Hessian.
pub fn potential_grad_hess(s: &StateZ) -> PotentialEval {
    let StateZ { x, y, a, b, c, .. } = *s;
    PotentialEval {
        v: x * x * x / 3.0 + y * y * y / 3.0 + a * x * y + b * x + c * y,
        grad: [x * x + a * y + b, y * y + a * x + c],
        hess: [[2.0 * x, a], [a, 2.0 * y]],
    }
}

/// Errors raised while reading a system description.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed configuration: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("missing section [{0}]")]
    MissingSection(&'static str),
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
    #[error("invalid value for `{key}`: {message}")]
    InvalidValue { key: String, message: String },
    #[error("in `{key}`: {source}")]
    Poly {
        key: String,
        #[source]
        source: ParseError,
    },
}

/// A polynomial entry in a config file: either a quoted expression or a bare number.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum PolySource {
    Text(String),
    Number(f64),
}

impl PolySource {
    fn parse(&self, key: &str) -> Result<PolyExpr, ConfigError> {
        match self {
            PolySource::Text(s) => parse_poly(s).map_err(|source| ConfigError::Poly {
                key: key.to_string(),
                source,
            }),
            PolySource::Number(v) => Ok(PolyExpr::constant(*v)),
        }
    }
}

/// Raw `[system]` table.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: Option<String>,
    pub g_a: Option<PolySource>,
    pub g_b: Option<PolySource>,
    pub g_c: Option<PolySource>,
    pub f_x: Option<PolySource>,
    pub f_y: Option<PolySource>,
}

impl SystemSection {
    pub fn build(&self) -> Result<FastSlowSystem, ConfigError> {
        let req = |v: &Option<PolySource>, key: &'static str| -> Result<PolyExpr, ConfigError> {
            v.as_ref().ok_or(ConfigError::MissingKey(key))?.parse(key)
        };
        let opt = |v: &Option<PolySource>, key: &'static str| -> Result<PolyExpr, ConfigError> {
            match v {
                Some(p) => p.parse(key),
                None => Ok(PolyExpr::zero()),
            }
        };
        Ok(FastSlowSystem::new(
            self.name.clone().unwrap_or_else(|| "system".to_string()),
            req(&self.g_a, "g_a")?,
            req(&self.g_b, "g_b")?,
            req(&self.g_c, "g_c")?,
            opt(&self.f_x, "f_x")?,
            opt(&self.f_y, "f_y")?,
        ))
    }
}

/// Serializes a system as a `[system]` section that [`parse_system`] reads back.
pub fn system_to_toml(sys: &FastSlowSystem) -> String {
    let mut entries = BTreeMap::new();
    entries.insert("g_a", sys.g_a.to_string());
    entries.insert("g_b", sys.g_b.to_string());
    entries.insert("g_c", sys.g_c.to_string());
    entries.insert("f_x", sys.f_x.to_string());
    entries.insert("f_y", sys.f_y.to_string());
    let mut out = String::from("[system]\n");
    out.push_str(&format!("name = {}\n", toml_string(&sys.name)));
    for key in ["g_a", "g_b", "g_c", "f_x", "f_y"] {
        out.push_str(&format!("{key} = {}\n", toml_string(&entries[key])));
    }
    out
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Reads the `[system]` section from configuration text.
pub fn parse_system(text: &str) -> Result<FastSlowSystem, ConfigError> {
    #[derive(Deserialize)]
    struct Doc {
        system: Option<SystemSection>,
    }
    let doc: Doc = toml::from_str(text)?;
    doc.system.ok_or(ConfigError::MissingSection("system"))?.build()
}

/// Reads a configuration file from disk.
pub fn read_config_text(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}
