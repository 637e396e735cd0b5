//! Critical manifold, catastrophe map, stratification and germ codimension.
//!
//! The critical manifold `{x² + ay + b = 0, y² + ax + c = 0}` is the graph
//! `Ψ(x, y, a) = (x, y, a, −x² − ay, −y² − ax)` over the fast variables and
//! `a`. Its projection to parameter space is the catastrophe map
//! `π̃(x, y, a) = (a, −x² − ay, −y² − ax)`, whose Jacobian determinant is the
//! Hessian determinant `4xy − a²` of the potential.

use thiserror::Error;

use crate::poly::{det_and_adjugate, jacobian, PolyExpr, Var, NVARS};
use crate::system::StateZ;

/// Classification of a point of the critical manifold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StratumLabel {
    RegularAttracting,
    RegularRepelling,
    RegularSaddle,
    Fold,
    Cusp,
    HyperbolicUmbilic,
}

impl StratumLabel {
    pub fn is_singular(self) -> bool {
        matches!(
            self,
            StratumLabel::Fold | StratumLabel::Cusp | StratumLabel::HyperbolicUmbilic
        )
    }
}

/// Default tolerance of [`stratify`].
pub const STRATIFY_TOL: f64 = 1e-9;

/// Lifts `(x, y, a)` to the critical manifold.
pub fn psi(x: f64, y: f64, a: f64) -> StateZ {
    StateZ::new(x, y, a, -x * x - a * y, -y * y - a * x)
}

/// Projection of the critical manifold to the slow variables `(a, b, c)`.
pub fn catastrophe_map(x: f64, y: f64, a: f64) -> (f64, f64, f64) {
    (a, -x * x - a * y, -y * y - a * x)
}

/// The catastrophe map as three polynomials in the slots `(x, y, a)`.
pub fn catastrophe_map_polys() -> Vec<PolyExpr> {
    let x = PolyExpr::var(Var::X);
    let y = PolyExpr::var(Var::Y);
    let a = PolyExpr::var(Var::A);
    vec![a.clone(), -(&(&x * &x) + &(&a * &y)), -(&(&y * &y) + &(&a * &x))]
}

/// Exact Jacobian determinant of the catastrophe map, a polynomial in `(x, y, a)`.
pub fn catastrophe_jacobian_det() -> PolyExpr {
    det_and_adjugate(&jacobian(&catastrophe_map_polys())).0
}

/// Numerical Jacobian `∂(a, b, c)/∂(x, y, a)` of the catastrophe map.
pub fn catastrophe_jacobian(x: f64, y: f64, a: f64) -> [[f64; 3]; 3] {
    [[0.0, 0.0, 1.0], [-2.0 * x, -a, -y], [-a, -2.0 * y, -x]]
}

/// Labels the critical-manifold point `Ψ(x, y, a)`.
///
/// Points with `|4xy − a²| ≤ tol` are singular: the origin is the hyperbolic
/// umbilic, the line `x = y = a/2` consists of cusps and the rest of the cone
/// of folds. Regular points are classified by the Hessian of the potential:
/// positive determinant with negative trace attracts, positive determinant with
/// positive trace repels, negative determinant is of saddle type.
pub fn stratify(x: f64, y: f64, a: f64, tol: f64) -> StratumLabel {
    let det = 4.0 * x * y - a * a;
    if det.abs() <= tol {
        if x.abs() <= tol && y.abs() <= tol && a.abs() <= tol {
            StratumLabel::HyperbolicUmbilic
        } else if (x - y).abs() <= tol && (x - 0.5 * a).abs() <= tol {
            StratumLabel::Cusp
        } else {
            StratumLabel::Fold
        }
    } else if det < 0.0 {
        StratumLabel::RegularSaddle
    } else if x + y < 0.0 {
        StratumLabel::RegularAttracting
    } else {
        StratumLabel::RegularRepelling
    }
}

/// A polynomial germ in `x, y` vanishing to second order at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Germ {
    poly: PolyExpr,
}

/// Errors of the germ routines.
#[derive(Clone, Debug, PartialEq, Error)]
pub enum GeometryError {
    #[error("germ may only involve x and y")]
    ForeignVariable,
    #[error("germ must vanish with its gradient at the origin (found a term of degree {0})")]
    NotInSquareOfMaximalIdeal(u32),
    #[error("germ is identically zero")]
    ZeroGerm,
    #[error("codimension does not stabilise up to degree {max_degree} ({lower} at degree {}, {upper} at degree {max_degree})", max_degree - 1)]
    DegreeTooLow {
        max_degree: u32,
        lower: usize,
        upper: usize,
    },
}

impl Germ {
    pub fn new(poly: PolyExpr) -> Result<Self, GeometryError> {
        if poly.is_zero() {
            return Err(GeometryError::ZeroGerm);
        }
        for (e, _) in poly.terms() {
            if e[2..].iter().any(|&k| k != 0) {
                return Err(GeometryError::ForeignVariable);
            }
            let deg = (e[0] + e[1]) as u32;
            if deg < 2 {
                return Err(GeometryError::NotInSquareOfMaximalIdeal(deg));
            }
        }
        Ok(Self { poly })
    }

    pub fn poly(&self) -> &PolyExpr {
        &self.poly
    }

    /// The variables (`x` and/or `y`) on which the germ actually depends.
    pub fn variables(&self) -> Vec<Var> {
        [Var::X, Var::Y]
            .into_iter()
            .filter(|v| !self.poly.is_free_of(v.index()))
            .collect()
    }
}

/// Result of [`germ_codimension`]: the codimension and monomial
/// representatives of a basis of the quotient.
#[derive(Clone, Debug, PartialEq)]
pub struct Codimension {
    pub codim: usize,
    pub variables: Vec<Var>,
    /// Exponents `(e_x, e_y)` of the basis monomials.
    pub basis: Vec<[u8; 2]>,
}

impl Codimension {
    pub fn basis_strings(&self) -> Vec<String> {
        self.basis
            .iter()
            .map(|e| {
                let mut full = [0u8; NVARS];
                full[0] = e[0];
                full[1] = e[1];
                PolyExpr::monomial(1.0, full).to_string()
            })
            .collect()
    }
}

/// Default jet order of [`germ_codimension`].
pub const GERM_MAX_DEGREE: u32 = 6;

/// Dimension of `𝔪 / Δ(f)` computed in the jet space of order `max_degree`.
///
/// The germ is regarded as a function of the variables it actually involves.
/// The Jacobi ideal is spanned, modulo monomials of degree above
/// `max_degree`, by the products `m·∂f` of monomials with partial derivatives;
/// its rank inside the span of monomials of degree `1..=max_degree` is found by
/// Gaussian elimination (pivot tolerance `1e-10`). Columns are ordered by
/// decreasing degree so the non-pivot monomials, returned as the basis, are
/// the lowest-degree representatives. The computation is repeated one degree
/// lower and [`GeometryError::DegreeTooLow`] is raised if the two disagree.
pub fn germ_codimension(f: &Germ, max_degree: u32) -> Result<Codimension, GeometryError> {
    let vars = f.variables();
    let upper = codim_in_jet(f, &vars, max_degree);
    let lower = if max_degree > 1 {
        codim_in_jet(f, &vars, max_degree - 1).0
    } else {
        usize::MAX
    };
    if lower != upper.0 {
        return Err(GeometryError::DegreeTooLow {
            max_degree,
            lower,
            upper: upper.0,
        });
    }
    Ok(Codimension {
        codim: upper.0,
        variables: vars,
        basis: upper.1,
    })
}

fn monomials(vars: &[Var], lo: u32, hi: u32) -> Vec<[u8; 2]> {
    let mut out = Vec::new();
    for d in (lo..=hi).rev() {
        match vars.len() {
            1 => {
                let mut e = [0u8; 2];
                e[vars[0].index()] = d as u8;
                out.push(e);
            }
            2 => {
                for i in (0..=d).rev() {
                    out.push([i as u8, (d - i) as u8]);
                }
            }
            _ => {}
        }
    }
    out
}

fn codim_in_jet(f: &Germ, vars: &[Var], max_degree: u32) -> (usize, Vec<[u8; 2]>) {
    let columns = monomials(vars, 1, max_degree);
    let index = |e: [u8; 2]| columns.iter().position(|c| *c == e);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for v in vars {
        let df = f.poly.differentiate(*v);
        if df.is_zero() {
            continue;
        }
        for m in monomials(vars, 0, max_degree) {
            let mut row = vec![0.0; columns.len()];
            let mut any = false;
            for (e, c) in df.terms() {
                let prod = [e[0] + m[0], e[1] + m[1]];
                if let Some(j) = index(prod) {
                    row[j] += c;
                    any = true;
                }
            }
            if any {
                rows.push(row);
            }
        }
    }
    let pivots = pivot_columns(&mut rows, columns.len(), 1e-10);
    let mut basis: Vec<[u8; 2]> = (0..columns.len())
        .filter(|j| !pivots.contains(j))
        .map(|j| columns[j])
        .collect();
    basis.sort_by_key(|e| (e[0] + e[1], std::cmp::Reverse(e[0])));
    (basis.len(), basis)
}

/// Row reduction with partial pivoting; returns the pivot columns.
fn pivot_columns(rows: &mut [Vec<f64>], ncols: usize, tol: f64) -> Vec<usize> {
    for row in rows.iter_mut() {
        let scale = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale > 0.0 {
            row.iter_mut().for_each(|v| *v /= scale);
        }
    }
    let mut pivots = Vec::new();
    let mut r = 0;
    for j in 0..ncols {
        if r >= rows.len() {
            break;
        }
        let (best, val) =
            (r..rows.len())
                .map(|i| (i, rows[i][j].abs()))
                .fold((r, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= tol {
            continue;
        }
        rows.swap(r, best);
        let pivot = rows[r].clone();
        for row in rows.iter_mut().skip(r + 1) {
            let factor = row[j] / pivot[j];
            if factor != 0.0 {
                for k in j..ncols {
                    row[k] -= factor * pivot[k];
                }
            }
        }
        pivots.push(j);
        r += 1;
    }
    pivots
}
