//! The layer problem `x' = x² + ay + b`, `y' = y² + ax + c`.
//!
//! For frozen parameters `(a, b, c)` this is the gradient field of the
//! potential in the fast variables. Its Jacobian is the Hessian
//! `[[2x, a], [a, 2y]]`, so equilibria are classified by `det = 4xy − a²` and
//! `trace = 2(x + y)`.

use nalgebra::Matrix4;
use rayon::prelude::*;
use thiserror::Error;

use crate::ode::{integrate_to_event, Direction, IntegratorConfig, OdeError};

/// Frozen parameters of the layer problem.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FastParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl FastParams {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }
}

/// Velocity of the layer problem.
pub fn fast_vector_field(p: &FastParams, s: &[f64; 2]) -> [f64; 2] {
    let [x, y] = *s;
    [x * x + p.a * y + p.b, y * y + p.a * x + p.c]
}

/// Stability type of an equilibrium.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EquilibriumKind {
    Sink,
    Source,
    Saddle,
    Degenerate,
}

/// An equilibrium with its Jacobian invariants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquilibriumInfo {
    pub pos: [f64; 2],
    pub det: f64,
    pub trace: f64,
    pub kind: EquilibriumKind,
}

/// `|det|` below which an equilibrium counts as degenerate.
pub const DEGENERATE_DET: f64 = 1e-7;
/// Distance below which two roots are identified.
pub const DEDUPE_TOL: f64 = 1e-9;
/// Distance below which roots at a degenerate point are merged.
pub const DEGENERATE_MERGE: f64 = 1e-4;
/// Default threshold on `|a|` below which the decoupled formulas are used.
pub const A_ZERO_TOL: f64 = 1e-12;

fn classify_point(p: &FastParams, x: f64, y: f64) -> EquilibriumInfo {
    let det = 4.0 * x * y - p.a * p.a;
    let trace = 2.0 * (x + y);
    let kind = if det.abs() < DEGENERATE_DET {
        EquilibriumKind::Degenerate
    } else if det < 0.0 {
        EquilibriumKind::Saddle
    } else if trace < 0.0 {
        EquilibriumKind::Sink
    } else {
        EquilibriumKind::Source
    };
    EquilibriumInfo {
        pos: [x, y],
        det,
        trace,
        kind,
    }
}

/// All real equilibria (at most four), sorted by `x` then `y`.
///
/// For `|a| > tol` the substitution `y = −(x² + b)/a` leads to the quartic
/// `x⁴ + 2bx² + a³x + (b² + a²c) = 0`, solved through the eigenvalues of its
/// companion matrix. Near a double root the eigenvalues of the companion
/// matrix split by `O(ε_mach^{1/k})` for a `k`-fold root (a triple root at
/// cusps), into the complex plane or along the real axis; such roots are
/// accepted when the quartic residual is small and grouped; a group of `k`
/// copies is polished by Newton's method on the `(k−1)`-th derivative, of
/// which the multiple root is a simple root.
/// For `|a| ≤ tol` the equations decouple into `x² = −b`, `y² = −c`.
pub fn fast_equilibria(p: &FastParams, tol: f64) -> Vec<EquilibriumInfo> {
    let mut pts: Vec<[f64; 2]> = Vec::new();
    if p.a.abs() > tol {
        let (a, b, c) = (p.a, p.b, p.c);
        // Ascending coefficients of the monic quartic.
        let quartic = [b * b + a * a * c, a * a * a, 2.0 * b, 0.0, 1.0];
        let scale = 1.0 + quartic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let companion = Matrix4::new(
            0.0,
            0.0,
            0.0,
            -quartic[0],
            1.0,
            0.0,
            0.0,
            -quartic[1],
            0.0,
            1.0,
            0.0,
            -quartic[2],
            0.0,
            0.0,
            1.0,
            -quartic[3],
        );
        let mut xs: Vec<f64> = Vec::new();
        for z in companion.complex_eigenvalues().iter() {
            let mag = 1.0 + z.re.abs();
            let accept = z.im.abs() <= 1e-8 * mag
                || (z.im.abs() <= 1e-4 * mag && horner(&quartic, z.re).abs() <= 1e-9 * scale * mag.powi(4));
            if accept {
                xs.push(z.re);
            }
        }
        xs.sort_by(f64::total_cmp);
        // Group the split copies of a multiple root: neighbours closer than
        // DEGENERATE_MERGE whose mean is (numerically) a critical point of q.
        let mut groups: Vec<Vec<f64>> = Vec::new();
        for x in xs {
            if let Some(g) = groups.last_mut() {
                let mean = (g.iter().sum::<f64>() + x) / (g.len() + 1) as f64;
                let close = (x - g[g.len() - 1]).abs() <= DEDUPE_TOL * (1.0 + x.abs());
                let multiple = (x - g[0]).abs() <= DEGENERATE_MERGE * (1.0 + x.abs())
                    && horner(&derivative(&quartic), mean).abs() <= 1e-6 * scale;
                if close || multiple {
                    g.push(x);
                    continue;
                }
            }
            groups.push(vec![x]);
        }
        for g in groups {
            // A k-fold root is a simple root of the (k−1)-th derivative.
            let mut poly = quartic.to_vec();
            for _ in 1..g.len() {
                poly = derivative(&poly);
            }
            let x = newton_polish(&poly, g.iter().sum::<f64>() / g.len() as f64);
            pts.push([x, -(x * x + b) / a]);
        }
    } else {
        let xs = square_roots(-p.b);
        let ys = square_roots(-p.c);
        for &x in &xs {
            for &y in &ys {
                pts.push([x, y]);
            }
        }
    }
    let mut infos: Vec<EquilibriumInfo> = Vec::new();
    for pt in pts {
        let dup = infos
            .iter()
            .any(|e| ((e.pos[0] - pt[0]).powi(2) + (e.pos[1] - pt[1]).powi(2)).sqrt() <= DEDUPE_TOL);
        if !dup {
            infos.push(classify_point(p, pt[0], pt[1]));
        }
    }
    infos.sort_by(|u, v| u.pos.partial_cmp(&v.pos).unwrap_or(std::cmp::Ordering::Equal));
    infos.truncate(4);
    infos
}

/// Evaluates a polynomial given by ascending coefficients.
fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect()
}

/// Newton iteration that stops as soon as the residual no longer decreases.
fn newton_polish(coeffs: &[f64], mut x: f64) -> f64 {
    let d = derivative(coeffs);
    for _ in 0..60 {
        let slope = horner(&d, x);
        if slope == 0.0 {
            break;
        }
        let next = x - horner(coeffs, x) / slope;
        if !next.is_finite() || horner(coeffs, next).abs() >= horner(coeffs, x).abs() {
            break;
        }
        x = next;
    }
    x
}

fn square_roots(v: f64) -> Vec<f64> {
    if v > 0.0 {
        let r = v.sqrt();
        vec![-r, r]
    } else if v == 0.0 {
        vec![0.0]
    } else {
        Vec::new()
    }
}

/// Phase-portrait configuration of the layer problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Configuration {
    /// No equilibria.
    A,
    /// A saddle and a sink.
    B,
    /// A saddle and a source.
    C,
    /// Two saddles, a source and a sink.
    D,
    /// A degenerate equilibrium is present.
    Bifurcation,
}

/// Errors of the layer-problem routines.
#[derive(Clone, Debug, PartialEq, Error)]
pub enum FastError {
    #[error("inconsistent equilibrium count: {sinks} sinks, {sources} sources, {saddles} saddles")]
    InconsistentCount {
        sinks: usize,
        sources: usize,
        saddles: usize,
    },
    #[error("parameters are not on the bifurcation set (no degenerate equilibrium)")]
    NotAtBifurcation,
}

/// Classifies the configuration from the equilibrium kinds.
pub fn classify_config(p: &FastParams) -> Result<Configuration, FastError> {
    let eqs = fast_equilibria(p, A_ZERO_TOL);
    if eqs.iter().any(|e| e.kind == EquilibriumKind::Degenerate) {
        return Ok(Configuration::Bifurcation);
    }
    let count = |k| eqs.iter().filter(|e| e.kind == k).count();
    let (sinks, sources, saddles) = (
        count(EquilibriumKind::Sink),
        count(EquilibriumKind::Source),
        count(EquilibriumKind::Saddle),
    );
    match (sinks, sources, saddles) {
        (0, 0, 0) => Ok(Configuration::A),
        (1, 0, 1) => Ok(Configuration::B),
        (0, 1, 1) => Ok(Configuration::C),
        (1, 1, 2) => Ok(Configuration::D),
        _ => Err(FastError::InconsistentCount {
            sinks,
            sources,
            saddles,
        }),
    }
}

/// Forward fate of one trajectory launched near a bifurcation equilibrium.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JumpOutcome {
    /// Crossed the exit section `{x + y = 2ν}`.
    Escape { exit_state: [f64; 2], flight_time: f64 },
    /// Entered the capture ball of the equilibrium with this index in
    /// [`fast_equilibria`].
    ToEquilibrium {
        index: usize,
        kind: EquilibriumKind,
        flight_time: f64,
    },
    /// Neither happened within the time limit (e.g. slow algebraic approach
    /// to a non-hyperbolic point or a measure-zero saddle connection).
    Undecided { flight_time: f64 },
}

/// A launch point and its outcome.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpLaunch {
    pub start: [f64; 2],
    pub outcome: JumpOutcome,
}

/// Settings of [`jump_outcomes`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpConfig {
    /// Launch offset from the degenerate equilibrium.
    pub delta: f64,
    /// Exit section `x + y = 2ν`.
    pub nu: f64,
    /// Radius of the capture ball around sinks.
    pub capture_radius: f64,
    pub max_time: f64,
    /// Transversal offsets, as multiples of `delta`.
    pub transversal: [f64; 2],
    pub integrator: IntegratorConfig,
}

impl Default for JumpConfig {
    fn default() -> Self {
        Self {
            delta: 1e-4,
            nu: 2.0,
            capture_radius: 1e-6,
            max_time: 1e3,
            transversal: [0.1, -0.1],
            integrator: IntegratorConfig::default().without_recording(),
        }
    }
}

/// Launches trajectories from a degenerate equilibrium and reports where
/// they go.
///
/// At the degenerate point the Hessian has a kernel vector `v`; along the
/// center direction the dynamics are `u' ≈ κu²` with `κ = v_x³ + v_y³` for
/// unit `v`, so trajectories emanate on the side `sign(u) = sign(κ)` (both
/// sides at cusps, where `κ` vanishes). Launches start at offsets `±δ·v` on
/// the emanating side(s), plus transversal perturbations, and are integrated
/// until they cross `x + y = 2ν` or enter the capture ball of a sink. The
/// passage along the center direction takes a time of order `1/(|κ|δ)`, so
/// the time limit is raised to `10/(|κ|δ)` when that exceeds `max_time`.
pub fn jump_outcomes(p: &FastParams, cfg: &JumpConfig) -> Result<Vec<JumpLaunch>, FastError> {
    let eqs = fast_equilibria(p, A_ZERO_TOL);
    let (idx, bif) = eqs
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == EquilibriumKind::Degenerate)
        .min_by(|u, v| u.1.det.abs().total_cmp(&v.1.det.abs()))
        .ok_or(FastError::NotAtBifurcation)?;
    let [x, y] = bif.pos;
    // Kernel of the symmetric matrix [[2x, a], [a, 2y]]: take the eigenvector
    // of the eigenvalue of smaller magnitude.
    let v = kernel_direction(2.0 * x, p.a, 2.0 * y);
    let n = [-v[1], v[0]];
    let kappa = v[0].powi(3) + v[1].powi(3);
    let sides: Vec<f64> = if kappa.abs() < 1e-6 {
        vec![1.0, -1.0]
    } else {
        vec![kappa.signum()]
    };
    let mut starts = Vec::new();
    for &s in &sides {
        for tau in std::iter::once(0.0).chain(cfg.transversal.iter().copied()) {
            starts.push([
                x + cfg.delta * (s * v[0] + tau * n[0]),
                y + cfg.delta * (s * v[1] + tau * n[1]),
            ]);
        }
    }
    let sinks: Vec<(usize, [f64; 2])> = eqs
        .iter()
        .enumerate()
        .filter(|(i, e)| *i != idx && e.kind == EquilibriumKind::Sink)
        .map(|(i, e)| (i, e.pos))
        .collect();
    // Leaving a saddle-node along its center direction takes time ~1/(|κ|δ).
    let mut run_cfg = *cfg;
    if kappa.abs() >= 1e-6 {
        run_cfg.max_time = cfg.max_time.max(10.0 / (kappa.abs() * cfg.delta));
    }
    let launches = starts
        .par_iter()
        .map(|start| JumpLaunch {
            start: *start,
            outcome: launch(p, start, &sinks, &eqs, &run_cfg),
        })
        .collect();
    Ok(launches)
}

fn kernel_direction(p: f64, q: f64, r: f64) -> [f64; 2] {
    // Symmetric [[p, q], [q, r]]; eigenvalue of smallest magnitude.
    let mean = 0.5 * (p + r);
    let rad = (0.25 * (p - r).powi(2) + q * q).sqrt();
    let l1 = mean - rad;
    let l2 = mean + rad;
    let lam = if l1.abs() < l2.abs() { l1 } else { l2 };
    let cand = if (p - lam).abs() + q.abs() > (r - lam).abs() + q.abs() {
        [-q, p - lam]
    } else {
        [r - lam, -q]
    };
    let nrm = (cand[0] * cand[0] + cand[1] * cand[1]).sqrt();
    if nrm == 0.0 {
        [1.0, 0.0]
    } else {
        [cand[0] / nrm, cand[1] / nrm]
    }
}

fn launch(
    p: &FastParams,
    start: &[f64; 2],
    sinks: &[(usize, [f64; 2])],
    eqs: &[EquilibriumInfo],
    cfg: &JumpConfig,
) -> JumpOutcome {
    let nearest = |s: &[f64; 2]| -> (f64, usize) {
        sinks
            .iter()
            .map(|(i, q)| (((s[0] - q[0]).powi(2) + (s[1] - q[1]).powi(2)).sqrt(), *i))
            .fold((f64::INFINITY, usize::MAX), |m, v| if v.0 < m.0 { v } else { m })
    };
    let r_cap = cfg.capture_radius;
    let two_nu = 2.0 * cfg.nu;
    let event = |_: f64, s: &[f64; 2]| {
        let exit = two_nu - (s[0] + s[1]);
        let capture = nearest(s).0 - r_cap;
        exit.min(capture)
    };
    let field = |_: f64, s: &[f64; 2]| fast_vector_field(p, s);
    match integrate_to_event(
        field,
        start,
        (0.0, cfg.max_time),
        event,
        Direction::Falling,
        &cfg.integrator,
    ) {
        Ok(hit) => {
            let (d, i) = nearest(&hit.state);
            if d - r_cap <= two_nu - (hit.state[0] + hit.state[1]) && i != usize::MAX {
                JumpOutcome::ToEquilibrium {
                    index: i,
                    kind: eqs[i].kind,
                    flight_time: hit.t,
                }
            } else {
                JumpOutcome::Escape {
                    exit_state: hit.state,
                    flight_time: hit.t,
                }
            }
        }
        Err(OdeError::NoEvent { t, .. }) | Err(OdeError::MaxSteps { t }) | Err(OdeError::StepFail { t }) => {
            JumpOutcome::Undecided { flight_time: t }
        }
        Err(OdeError::InvalidSpan) => JumpOutcome::Undecided { flight_time: 0.0 },
    }
}

/// `Z_{a,c,b}(y, x)`, the field transported by the reflection `x ↔ y`.
pub fn symmetry_swap(p: &FastParams, s: &[f64; 2]) -> [f64; 2] {
    fast_vector_field(&FastParams::new(p.a, p.c, p.b), &[s[1], s[0]])
}

/// `Z_{−a,b,c}(−x, −y)`, the field transported by the point reflection.
pub fn symmetry_reflect(p: &FastParams, s: &[f64; 2]) -> [f64; 2] {
    fast_vector_field(&FastParams::new(-p.a, p.b, p.c), &[-s[0], -s[1]])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(eqs: &[EquilibriumInfo]) -> Vec<EquilibriumKind> {
        eqs.iter().map(|e| e.kind).collect()
    }

    #[test]
    fn decoupled_four_equilibria() {
        let eqs = fast_equilibria(&FastParams::new(0.0, -1.0, -1.0), A_ZERO_TOL);
        assert_eq!(eqs.len(), 4);
        let find = |x: f64, y: f64| eqs.iter().find(|e| e.pos == [x, y]).unwrap().kind;
        assert_eq!(find(-1.0, -1.0), EquilibriumKind::Sink);
        assert_eq!(find(1.0, 1.0), EquilibriumKind::Source);
        assert_eq!(find(1.0, -1.0), EquilibriumKind::Saddle);
        assert_eq!(find(-1.0, 1.0), EquilibriumKind::Saddle);
    }

    #[test]
    fn no_equilibria() {
        assert!(fast_equilibria(&FastParams::new(0.0, 1.0, 1.0), A_ZERO_TOL).is_empty());
        assert_eq!(
            classify_config(&FastParams::new(0.0, 1.0, 1.0)).unwrap(),
            Configuration::A
        );
    }

    #[test]
    fn cusp_double_root() {
        let p = FastParams::new(1.0, -0.75, -0.75);
        let eqs = fast_equilibria(&p, A_ZERO_TOL);
        assert_eq!(eqs.len(), 2, "{eqs:?}");
        let deg = eqs.iter().find(|e| e.kind == EquilibriumKind::Degenerate).unwrap();
        assert!(
            (deg.pos[0] - 0.5).abs() < 1e-6 && (deg.pos[1] - 0.5).abs() < 1e-6,
            "{deg:?}"
        );
        let sink = eqs.iter().find(|e| e.kind == EquilibriumKind::Sink).unwrap();
        assert!((sink.pos[0] + 1.5).abs() < 1e-12 && (sink.pos[1] + 1.5).abs() < 1e-12);
        assert_eq!(classify_config(&p).unwrap(), Configuration::Bifurcation);
    }

    #[test]
    fn quartic_route_configurations() {
        assert_eq!(
            classify_config(&FastParams::new(0.0, -1.0, -1.0)).unwrap(),
            Configuration::D
        );
        assert_eq!(
            classify_config(&FastParams::new(0.1, -1.0, -1.0)).unwrap(),
            Configuration::D
        );
        // Large positive a: one saddle and one sink.
        let p = FastParams::new(2.0, 0.0, 0.0);
        assert_eq!(kinds(&fast_equilibria(&p, A_ZERO_TOL)).len(), 2);
        assert_eq!(classify_config(&p).unwrap(), Configuration::B);
        assert_eq!(
            classify_config(&FastParams::new(-2.0, 0.0, 0.0)).unwrap(),
            Configuration::C
        );
    }

    #[test]
    fn equilibria_are_zeros() {
        for p in [
            FastParams::new(0.7, -1.3, -0.2),
            FastParams::new(-1.1, -0.5, -2.0),
            FastParams::new(0.3, -1.0, -1.0),
        ] {
            for e in fast_equilibria(&p, A_ZERO_TOL) {
                let v = fast_vector_field(&p, &e.pos);
                assert!(v[0].abs() < 1e-12 && v[1].abs() < 1e-12, "{p:?} {e:?}");
            }
        }
    }

    #[test]
    fn symmetries_hold_exactly() {
        let p = FastParams::new(0.37, -1.2, 0.8);
        let s = [0.3, -0.9];
        let z = fast_vector_field(&p, &s);
        assert_eq!(symmetry_swap(&p, &s), [z[1], z[0]]);
        assert_eq!(symmetry_reflect(&p, &s), z);
    }

    #[test]
    fn lower_cone_fold_escapes() {
        // Fold on the lower cone: (x, y) = (-1, -0.25), a = -1 (4xy = a²).
        let (x, y, a) = (-1.0, -0.25, -1.0);
        let p = FastParams::new(a, -x * x - a * y, -y * y - a * x);
        let launches = jump_outcomes(&p, &JumpConfig::default()).unwrap();
        assert!(!launches.is_empty());
        for l in launches {
            assert!(matches!(l.outcome, JumpOutcome::Escape { .. }), "{l:?}");
        }
    }

    #[test]
    fn not_at_bifurcation_is_rejected() {
        assert_eq!(
            jump_outcomes(&FastParams::new(0.0, -1.0, -1.0), &JumpConfig::default()),
            Err(FastError::NotAtBifurcation)
        );
    }
}
