//! The desingularized slow flow on the critical manifold.
//!
//! In the coordinates `(x, y, a)` of `Ψ` the reduced flow is
//! `dπ̃ · (ẋ, ẏ, ȧ) = g̃` with `g̃ = g ∘ Ψ` at `ε = 0`. Multiplying by the
//! adjugate of `dπ̃` removes the singularity on the fold cone:
//!
//! ```text
//! ẋ = a g̃_c − 2y g̃_b + (xa − 2y²) g̃_a
//! ẏ = a g̃_b − 2x g̃_c + (ya − 2x²) g̃_a
//! ȧ = (4xy − a²) g̃_a
//! ```
//!
//! The rescaling by `det dπ̃ = 4xy − a²` reverses time where the determinant is
//! negative, i.e. on the saddle-type part of the critical manifold.

use nalgebra::Complex;
use thiserror::Error;

use crate::geometry::{catastrophe_jacobian, stratify, StratumLabel, STRATIFY_TOL};
use crate::ode::{integrate_to_event, Direction, IntegratorConfig, OdeError, Trajectory};
use crate::poly::{PolyExpr, Var, NVARS};
use crate::system::FastSlowSystem;

/// A point `(x, y, a)` parametrizing the critical manifold.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SlowState {
    pub x: f64,
    pub y: f64,
    pub a: f64,
}

impl SlowState {
    pub fn new(x: f64, y: f64, a: f64) -> Self {
        Self { x, y, a }
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.a]
    }

    pub fn from_array(v: &[f64; 3]) -> Self {
        Self {
            x: v[0],
            y: v[1],
            a: v[2],
        }
    }

    /// `4xy − a²`.
    pub fn det(&self) -> f64 {
        4.0 * self.x * self.y - self.a * self.a
    }
}

/// Errors of the slow-flow routines.
#[derive(Clone, Debug, PartialEq, Error)]
pub enum SlowFlowError {
    #[error("degenerate linearization: B0·C0 = 0")]
    Degenerate,
    #[error("σ requires B0 > 0 and C0 > 0")]
    RequiresPositiveDrift,
    #[error("trajectory left the attracting region at (x, y, a) = ({}, {}, {})", .0.x, .0.y, .0.a)]
    LeftAttractingRegion(SlowState),
    #[error("section y = −ν not reached: {0}")]
    NoEvent(OdeError),
    #[error(transparent)]
    Ode(OdeError),
}

/// `g̃ = (g_a, g_b, g_c) ∘ Ψ` at `ε = 0`.
pub fn g_tilde(sys: &FastSlowSystem, s: &SlowState) -> [f64; 3] {
    let SlowState { x, y, a } = *s;
    let v = [x, y, a, -x * x - a * y, -y * y - a * x, 0.0];
    [sys.g_a().eval(&v), sys.g_b().eval(&v), sys.g_c().eval(&v)]
}

/// The desingularized slow flow, evaluated from its closed form.
pub fn desing_slow_flow(sys: &FastSlowSystem, s: &SlowState) -> [f64; 3] {
    let [ga, gb, gc] = g_tilde(sys, s);
    let SlowState { x, y, a } = *s;
    [
        a * gc - 2.0 * y * gb + (x * a - 2.0 * y * y) * ga,
        a * gb - 2.0 * x * gc + (y * a - 2.0 * x * x) * ga,
        (4.0 * x * y - a * a) * ga,
    ]
}

/// The same field computed as `adj(dπ̃) · g̃` from the numerical Jacobian of
/// the catastrophe map.
pub fn desing_slow_flow_adjugate(sys: &FastSlowSystem, s: &SlowState) -> [f64; 3] {
    let m = catastrophe_jacobian(s.x, s.y, s.a);
    let g = g_tilde(sys, s);
    let mut adj = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            // cofactor of entry (j, i)
            let r: Vec<usize> = (0..3).filter(|&k| k != j).collect();
            let c: Vec<usize> = (0..3).filter(|&k| k != i).collect();
            let minor = m[r[0]][c[0]] * m[r[1]][c[1]] - m[r[0]][c[1]] * m[r[1]][c[0]];
            adj[i][j] = if (i + j) % 2 == 0 { minor } else { -minor };
        }
    }
    std::array::from_fn(|i| adj[i][0] * g[0] + adj[i][1] * g[1] + adj[i][2] * g[2])
}

/// The slow flow as three polynomials in the slots `(x, y, a)`.
pub fn desing_slow_flow_polys(sys: &FastSlowSystem) -> [PolyExpr; 3] {
    let x = PolyExpr::var(Var::X);
    let y = PolyExpr::var(Var::Y);
    let a = PolyExpr::var(Var::A);
    let subs: [PolyExpr; NVARS] = [
        x.clone(),
        y.clone(),
        a.clone(),
        -(&(&x * &x) + &(&a * &y)),
        -(&(&y * &y) + &(&a * &x)),
        PolyExpr::zero(),
    ];
    let ga = sys.g_a().compose(&subs);
    let gb = sys.g_b().compose(&subs);
    let gc = sys.g_c().compose(&subs);
    let two = PolyExpr::constant(2.0);
    let xa = &x * &a;
    let ya = &y * &a;
    let yy2 = &two * &(&y * &y);
    let xx2 = &two * &(&x * &x);
    let det = &(&PolyExpr::constant(4.0) * &(&x * &y)) - &(&a * &a);
    [
        &(&(&a * &gc) - &(&(&two * &y) * &gb)) + &(&(&xa - &yy2) * &ga),
        &(&(&a * &gb) - &(&(&two * &x) * &gc)) + &(&(&ya - &xx2) * &ga),
        &det * &ga,
    ]
}

/// Slow-flow velocity with the orientation corrected in the saddle-type region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedVelocity {
    pub velocity: [f64; 3],
    /// Set on the fold cone, where the orientation is undefined and the
    /// unsigned field is returned.
    pub degenerate: bool,
}

/// `sign(4xy − a²) · Y`, flagged on the cone `|4xy − a²| < 1e-12`.
pub fn oriented_slow_flow(sys: &FastSlowSystem, s: &SlowState) -> OrientedVelocity {
    let v = desing_slow_flow(sys, s);
    let det = s.det();
    if det.abs() < 1e-12 {
        OrientedVelocity {
            velocity: v,
            degenerate: true,
        }
    } else if det < 0.0 {
        OrientedVelocity {
            velocity: v.map(|c| -c),
            degenerate: false,
        }
    } else {
        OrientedVelocity {
            velocity: v,
            degenerate: false,
        }
    }
}

/// Arrangement of invariant manifolds at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OriginType {
    /// `B0, C0 > 0`: two one-dimensional stable manifolds and a center manifold.
    TwoStable,
    /// `B0, C0 < 0`: two one-dimensional unstable manifolds and a center manifold.
    TwoUnstable,
    /// Opposite signs: a center manifold with rotation around it.
    Rotational,
}

/// Linearization data of the slow flow at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct OriginSpectrum {
    /// Ordered as `0, −2√(B0C0), +2√(B0C0)`.
    pub eigenvalues: [Complex<f64>; 3],
    /// Real eigenvectors in the same order (absent in the rotational case
    /// except for the kernel).
    pub eigenvectors: [Option<[f64; 3]>; 3],
    pub classification: OriginType,
}

/// The linearization `[[0, −2B0, C0], [−2C0, 0, B0], [0, 0, 0]]` at the origin.
pub fn origin_linearization(sys: &FastSlowSystem) -> [[f64; 3]; 3] {
    let (b0, c0) = (sys.b0(), sys.c0());
    [[0.0, -2.0 * b0, c0], [-2.0 * c0, 0.0, b0], [0.0, 0.0, 0.0]]
}

/// Eigen-structure of the slow flow at the origin.
pub fn origin_spectrum(sys: &FastSlowSystem) -> Result<OriginSpectrum, SlowFlowError> {
    let (b0, c0) = (sys.b0(), sys.c0());
    let p = b0 * c0;
    if p == 0.0 {
        return Err(SlowFlowError::Degenerate);
    }
    let kernel = Some([b0 / (2.0 * c0), c0 / (2.0 * b0), 1.0]);
    let root = p.abs().sqrt();
    if p > 0.0 {
        let s = b0 / root;
        Ok(OriginSpectrum {
            eigenvalues: [
                Complex::new(0.0, 0.0),
                Complex::new(-2.0 * root, 0.0),
                Complex::new(2.0 * root, 0.0),
            ],
            eigenvectors: [kernel, Some([s, 1.0, 0.0]), Some([-s, 1.0, 0.0])],
            classification: if b0 > 0.0 {
                OriginType::TwoStable
            } else {
                OriginType::TwoUnstable
            },
        })
    } else {
        Ok(OriginSpectrum {
            eigenvalues: [
                Complex::new(0.0, 0.0),
                Complex::new(0.0, -2.0 * root),
                Complex::new(0.0, 2.0 * root),
            ],
            eigenvectors: [kernel, None, None],
            classification: OriginType::Rotational,
        })
    }
}

/// Defaults for [`sigma_trajectory`].
pub const SIGMA_NU: f64 = 0.25;
pub const SIGMA_DELTA0: f64 = 1e-4;

/// The trajectory σ and its intersection with the entry section.
#[derive(Clone, Debug, PartialEq)]
pub struct Sigma {
    /// Backward-time samples from near the origin to the section.
    pub trajectory: Trajectory<3>,
    /// Intersection with `{y = −ν}`.
    pub p: SlowState,
}

/// Computes σ, the trajectory reaching the origin from inside the attracting
/// sheet, by integrating the slow flow backward from
/// `−δ0 · v_s / |v_s|` with `v_s = (√(B0/C0), 1, 0)` until `y = −ν`.
pub fn sigma_trajectory(
    sys: &FastSlowSystem,
    nu: f64,
    delta0: f64,
    cfg: &IntegratorConfig,
) -> Result<Sigma, SlowFlowError> {
    let (b0, c0) = (sys.b0(), sys.c0());
    if !(b0 > 0.0 && c0 > 0.0) {
        return Err(SlowFlowError::RequiresPositiveDrift);
    }
    let vs = [(b0 / c0).sqrt(), 1.0, 0.0];
    let n = (vs[0] * vs[0] + 1.0).sqrt();
    let start = [-delta0 * vs[0] / n, -delta0 / n, 0.0];
    let field = |_: f64, s: &[f64; 3]| desing_slow_flow(sys, &SlowState::from_array(s));
    let hit = integrate_to_event(field, &start, (0.0, -1e4), |_, s| s[1] + nu, Direction::Falling, cfg).map_err(
        |e| match e {
            OdeError::NoEvent { .. } => SlowFlowError::NoEvent(e),
            other => SlowFlowError::Ode(other),
        },
    )?;
    for s in &hit.trajectory.states {
        let st = SlowState::from_array(s);
        if stratify(st.x, st.y, st.a, STRATIFY_TOL) != StratumLabel::RegularAttracting {
            return Err(SlowFlowError::LeftAttractingRegion(st));
        }
    }
    Ok(Sigma {
        p: SlowState::from_array(&hit.state),
        trajectory: hit.trajectory,
    })
}
