//! Quasi-homogeneous blow-up of the umbilic point.
//!
//! The weights are `(1, 1, 1, 2, 2, 3)` for `(x, y, a, b, c, ε)`. Five
//! directional charts are provided:
//!
//! | chart    | coordinates                  | map                                        |
//! |----------|------------------------------|--------------------------------------------|
//! | `MinusY` | `(x₁, r₁, a₁, b₁, c₁, ε₁)`   | `x = r₁x₁, y = −r₁, a = r₁a₁, …`           |
//! | `Eps`    | `(x₂, y₂, a₂, b₂, c₂, r₂)`   | `x = r₂x₂, y = r₂y₂, …, ε = r₂³`           |
//! | `PlusA`  | `(x₃, y₃, r₃, b₃, c₃, ε₃)`   | `a = r₃`                                   |
//! | `MinusA` | `(x₄, y₄, r₄, b₄, c₄, ε₄)`   | `a = −r₄`                                  |
//! | `Exit`   | `(x₅, r₅, a₅, b₅, c₅, ε₅)`   | `x = r₅(1 + x₅), y = r₅(1 − x₅)`           |
//!
//! Chart vector fields are not typed in by hand. They come from one symbolic
//! pullback: the field is composed with the chart map, multiplied by the exact
//! polynomial adjugate of the chart Jacobian, and the monomial determinant
//! together with one extra power of the radial coordinate is cancelled by
//! exact polynomial division.
//!
//! The same machinery blows up the desingularized slow flow on the critical
//! manifold (charts in `(x, y, a)` only), which exposes the equilibria
//! `ζ₁ … ζ₆` on the blown-up umbilic.

use nalgebra::{Complex, DMatrix};
use thiserror::Error;

use crate::poly::{det_and_adjugate, jacobian, NotDivisible, PolyExpr, NVARS};
use crate::slow_flow::{desing_slow_flow_polys, g_tilde, SlowState};
use crate::system::{FastSlowSystem, StateZ};

/// Relative size below which leftover terms of a symbolic division count as
/// rounding dust.
pub const PULLBACK_DUST: f64 = 1e-12;

/// Quasi-homogeneous weights of `(x, y, a, b, c, ε)`.
pub const WEIGHTS: [i32; NVARS] = [1, 1, 1, 2, 2, 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlowupError {
    #[error("point violates the sign condition of chart {0:?}")]
    WrongSign(ChartId),
    #[error("point is not in the overlap with chart {0:?}")]
    NotInOverlap(ChartId),
    #[error("degenerate drift: B0*C0 = 0")]
    Degenerate,
    #[error("folded flows live in the ±a charts only, got {0:?}")]
    WrongChart(ChartId),
    #[error("chart Jacobian determinant is not a monomial in the radial coordinate")]
    NotMonomial,
    #[error("removable singularity did not cancel: {0}")]
    NotDivisible(#[from] NotDivisible),
}

/// The five directional charts of the blow-up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChartId {
    MinusY,
    Eps,
    PlusA,
    MinusA,
    Exit,
}

impl ChartId {
    pub const ALL: [ChartId; 5] = [
        ChartId::MinusY,
        ChartId::Eps,
        ChartId::PlusA,
        ChartId::MinusA,
        ChartId::Exit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ChartId::MinusY => "minus_y",
            ChartId::Eps => "eps",
            ChartId::PlusA => "plus_a",
            ChartId::MinusA => "minus_a",
            ChartId::Exit => "exit",
        }
    }

    /// Slot of the radial coordinate.
    pub fn radial_slot(self) -> usize {
        match self {
            ChartId::MinusY | ChartId::Exit => 1,
            ChartId::Eps => 5,
            ChartId::PlusA | ChartId::MinusA => 2,
        }
    }

    /// Coordinate names in slot order.
    pub fn coord_names(self) -> [&'static str; NVARS] {
        match self {
            ChartId::MinusY => ["x1", "r1", "a1", "b1", "c1", "eps1"],
            ChartId::Eps => ["x2", "y2", "a2", "b2", "c2", "r2"],
            ChartId::PlusA => ["x3", "y3", "r3", "b3", "c3", "eps3"],
            ChartId::MinusA => ["x4", "y4", "r4", "b4", "c4", "eps4"],
            ChartId::Exit => ["x5", "r5", "a5", "b5", "c5", "eps5"],
        }
    }

    /// The chart map as polynomials: original `(x, y, a, b, c, ε)` in terms of
    /// the chart slots.
    pub fn map_polys(self) -> [PolyExpr; NVARS] {
        let s = |i: usize| PolyExpr::slot(i);
        let r = s(self.radial_slot());
        let r2 = &r * &r;
        let r3 = &r2 * &r;
        match self {
            ChartId::MinusY => [&r * &s(0), -&r, &r * &s(2), &r2 * &s(3), &r2 * &s(4), &r3 * &s(5)],
            ChartId::Eps => [&r * &s(0), &r * &s(1), &r * &s(2), &r2 * &s(3), &r2 * &s(4), r3],
            ChartId::PlusA => [&r * &s(0), &r * &s(1), r.clone(), &r2 * &s(3), &r2 * &s(4), &r3 * &s(5)],
            ChartId::MinusA => [&r * &s(0), &r * &s(1), -&r, &r2 * &s(3), &r2 * &s(4), &r3 * &s(5)],
            ChartId::Exit => {
                let one = PolyExpr::constant(1.0);
                [
                    &r * &(&one + &s(0)),
                    &r * &(&one - &s(0)),
                    &r * &s(2),
                    &r2 * &s(3),
                    &r2 * &s(4),
                    &r3 * &s(5),
                ]
            }
        }
    }

    /// Normalization factor `λ > 0` that brings a weighted direction into this
    /// chart, or `None` if the direction is outside the chart domain.
    fn normalizer(self, w: &[f64; NVARS]) -> Option<f64> {
        let lambda = match self {
            ChartId::MinusY => -w[1],
            ChartId::Eps => {
                if w[5] > 0.0 {
                    w[5].cbrt()
                } else {
                    return None;
                }
            }
            ChartId::PlusA => w[2],
            ChartId::MinusA => -w[2],
            ChartId::Exit => 0.5 * (w[0] + w[1]),
        };
        (lambda > 0.0 && lambda.is_finite()).then_some(lambda)
    }
}

/// A point in one of the blow-up charts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChartPoint {
    pub chart: ChartId,
    pub coords: [f64; NVARS],
}

impl ChartPoint {
    pub fn new(chart: ChartId, coords: [f64; NVARS]) -> Self {
        Self { chart, coords }
    }

    /// Value of the radial coordinate.
    pub fn radial(&self) -> f64 {
        self.coords[self.chart.radial_slot()]
    }

    /// Weighted direction `(x̄, ȳ, ā, b̄, c̄, ε̄)` and radius `r` with
    /// `original = (r x̄, r ȳ, r ā, r² b̄, r² c̄, r³ ε̄)`.
    pub fn to_weighted(&self) -> ([f64; NVARS], f64) {
        let p = &self.coords;
        match self.chart {
            ChartId::MinusY => ([p[0], -1.0, p[2], p[3], p[4], p[5]], p[1]),
            ChartId::Eps => ([p[0], p[1], p[2], p[3], p[4], 1.0], p[5]),
            ChartId::PlusA => ([p[0], p[1], 1.0, p[3], p[4], p[5]], p[2]),
            ChartId::MinusA => ([p[0], p[1], -1.0, p[3], p[4], p[5]], p[2]),
            ChartId::Exit => ([1.0 + p[0], 1.0 - p[0], p[2], p[3], p[4], p[5]], p[1]),
        }
    }

    /// Inverse of [`ChartPoint::to_weighted`] after renormalizing the
    /// direction for `chart`.
    fn from_weighted(chart: ChartId, w: &[f64; NVARS], r: f64) -> Option<Self> {
        let lambda = chart.normalizer(w)?;
        let v: [f64; NVARS] = std::array::from_fn(|i| w[i] / lambda.powi(WEIGHTS[i]));
        let r = r * lambda;
        let coords = match chart {
            ChartId::MinusY => [v[0], r, v[2], v[3], v[4], v[5]],
            ChartId::Eps => [v[0], v[1], v[2], v[3], v[4], r],
            ChartId::PlusA | ChartId::MinusA => [v[0], v[1], r, v[3], v[4], v[5]],
            ChartId::Exit => [0.5 * (v[0] - v[1]), r, v[2], v[3], v[4], v[5]],
        };
        Some(Self { chart, coords })
    }
}

/// Applies the chart map: the point in original coordinates, `ε` included.
pub fn blow_up(p: &ChartPoint) -> StateZ {
    let (w, r) = p.to_weighted();
    StateZ::from_array(&std::array::from_fn(|i| r.powi(WEIGHTS[i]) * w[i]))
}

/// Chart coordinates of an original point satisfying the chart's sign condition.
pub fn chart_lift(chart: ChartId, s: &StateZ) -> Result<ChartPoint, BlowupError> {
    ChartPoint::from_weighted(chart, &s.to_array(), 1.0).ok_or(BlowupError::WrongSign(chart))
}

/// Change of chart on the overlap of `p.chart` and `to`.
pub fn coordinate_change(p: &ChartPoint, to: ChartId) -> Result<ChartPoint, BlowupError> {
    let (w, r) = p.to_weighted();
    ChartPoint::from_weighted(to, &w, r).ok_or(BlowupError::NotInOverlap(to))
}

/// Generic desingularizing pullback of a polynomial field.
///
/// `map` expresses the original leading `n = map.len()` slots in terms of the
/// chart slots and `field` is the original field in those slots. The result
/// is `adj(DΦ) · (field ∘ Φ) / (c r^(k + extra))` where `det DΦ = c r^k`.
pub fn pullback(map: &[PolyExpr], field: &[PolyExpr], radial: usize, extra: u8) -> Result<Vec<PolyExpr>, BlowupError> {
    let n = map.len();
    assert_eq!(field.len(), n);
    let subs: [PolyExpr; NVARS] = std::array::from_fn(|k| if k < n { map[k].clone() } else { PolyExpr::slot(k) });
    let jac = jacobian(map);
    let (det, adj) = det_and_adjugate(&jac);
    let det = det.prune(PULLBACK_DUST);
    let (power, coef) = match det.terms().collect::<Vec<_>>().as_slice() {
        [(e, c)] if e.iter().enumerate().all(|(i, &k)| i == radial || k == 0) => (e[radial], **c),
        _ => return Err(BlowupError::NotMonomial),
    };
    let composed: Vec<PolyExpr> = field.iter().map(|f| f.compose(&subs)).collect();
    let mut out = Vec::with_capacity(n);
    for row in &adj {
        let mut num = PolyExpr::zero();
        for (a, f) in row.iter().zip(&composed) {
            num = &num + &(a * f);
        }
        let q = num.div_monomial(radial, power + extra, PULLBACK_DUST)?;
        out.push(q.scale(1.0 / coef));
    }
    Ok(out)
}

fn to_array6(v: Vec<PolyExpr>) -> [PolyExpr; NVARS] {
    v.try_into().expect("six components")
}

fn to_array3(v: Vec<PolyExpr>) -> [PolyExpr; 3] {
    v.try_into().expect("three components")
}

/// Charts of the blow-up of the slow flow on the critical manifold, in the
/// coordinates `(x, y, a)` of its parametrization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SlowChartId {
    /// `x = r x̄, y = −r, a = r ā`; slots `(x̄, r, ā)`.
    MinusY,
    /// `x = r x̄, y = r, a = r ā`; slots `(x̄, r, ā)`.
    PlusY,
    /// `x = r x̄, y = r ȳ, a = r`; slots `(x̄, ȳ, r)`.
    PlusA,
    /// `x = r x̄, y = r ȳ, a = −r`; slots `(x̄, ȳ, r)`.
    MinusA,
}

impl SlowChartId {
    pub const ALL: [SlowChartId; 4] = [
        SlowChartId::MinusY,
        SlowChartId::PlusY,
        SlowChartId::PlusA,
        SlowChartId::MinusA,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SlowChartId::MinusY => "slow_minus_y",
            SlowChartId::PlusY => "slow_plus_y",
            SlowChartId::PlusA => "slow_plus_a",
            SlowChartId::MinusA => "slow_minus_a",
        }
    }

    pub fn radial_slot(self) -> usize {
        match self {
            SlowChartId::MinusY | SlowChartId::PlusY => 1,
            SlowChartId::PlusA | SlowChartId::MinusA => 2,
        }
    }

    /// The chart map `(x, y, a)` in terms of the chart slots.
    pub fn map_polys(self) -> [PolyExpr; 3] {
        let s = |i: usize| PolyExpr::slot(i);
        let r = s(self.radial_slot());
        match self {
            SlowChartId::MinusY => [&r * &s(0), -&r, &r * &s(2)],
            SlowChartId::PlusY => [&r * &s(0), r.clone(), &r * &s(2)],
            SlowChartId::PlusA => [&r * &s(0), &r * &s(1), r.clone()],
            SlowChartId::MinusA => [&r * &s(0), &r * &s(1), -&r],
        }
    }

    /// Original `(x, y, a)` of a chart point.
    pub fn blow_down(self, p: &[f64; 3]) -> SlowState {
        let m = self.map_polys();
        SlowState::new(m[0].eval_slice(p), m[1].eval_slice(p), m[2].eval_slice(p))
    }
}

/// A symbolic chart field together with its Jacobian.
#[derive(Clone, Debug)]
pub struct PolyField<const N: usize> {
    pub components: [PolyExpr; N],
    pub jacobian: [[PolyExpr; N]; N],
}

impl<const N: usize> PolyField<N> {
    fn new(components: [PolyExpr; N]) -> Self {
        let jacobian = std::array::from_fn(|i| std::array::from_fn(|j| components[i].differentiate_slot(j)));
        Self { components, jacobian }
    }

    pub fn eval(&self, p: &[f64; N]) -> [f64; N] {
        std::array::from_fn(|i| self.components[i].eval_slice(p))
    }

    pub fn linearization(&self, p: &[f64; N]) -> [[f64; N]; N] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.jacobian[i][j].eval_slice(p)))
    }
}

/// All chart fields of one system, built once and shared read-only.
#[derive(Clone, Debug)]
pub struct ChartAtlas {
    system: FastSlowSystem,
    fields: Vec<PolyField<NVARS>>,
    slow_fields: Vec<PolyField<3>>,
}

impl ChartAtlas {
    pub fn new(sys: &FastSlowSystem) -> Result<Self, BlowupError> {
        let x = sys.field_polys();
        let fields = ChartId::ALL
            .iter()
            .map(|c| pullback(&c.map_polys(), &x, c.radial_slot(), 1).map(|v| PolyField::new(to_array6(v))))
            .collect::<Result<Vec<_>, _>>()?;
        let y = desing_slow_flow_polys(sys);
        let slow_fields = SlowChartId::ALL
            .iter()
            .map(|c| pullback(&c.map_polys(), &y, c.radial_slot(), 0).map(|v| PolyField::new(to_array3(v))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            system: sys.clone(),
            fields,
            slow_fields,
        })
    }

    pub fn system(&self) -> &FastSlowSystem {
        &self.system
    }

    pub fn field(&self, chart: ChartId) -> &PolyField<NVARS> {
        &self.fields[ChartId::ALL.iter().position(|&c| c == chart).unwrap()]
    }

    pub fn slow_field(&self, chart: SlowChartId) -> &PolyField<3> {
        &self.slow_fields[SlowChartId::ALL.iter().position(|&c| c == chart).unwrap()]
    }

    /// Desingularized chart velocity at `p`.
    pub fn eval(&self, p: &ChartPoint) -> [f64; NVARS] {
        self.field(p.chart).eval(&p.coords)
    }

    /// Blown-up slow-flow velocity (no orientation correction).
    pub fn eval_slow(&self, chart: SlowChartId, p: &[f64; 3]) -> [f64; 3] {
        self.slow_field(chart).eval(p)
    }
}

/// Desingularized chart velocity at `p`.
///
/// Builds the symbolic field for the chart on each call; use [`ChartAtlas`]
/// for repeated evaluation.
pub fn chart_field(sys: &FastSlowSystem, p: &ChartPoint) -> Result<[f64; NVARS], BlowupError> {
    let c = p.chart;
    let v = pullback(&c.map_polys(), &sys.field_polys(), c.radial_slot(), 1)?;
    Ok(std::array::from_fn(|i| v[i].eval(&p.coords)))
}

/// Numerical Jacobian `DΦ(p)` of the chart map.
pub fn chart_map_jacobian(p: &ChartPoint) -> [[f64; NVARS]; NVARS] {
    let jac = jacobian(&p.chart.map_polys());
    std::array::from_fn(|i| std::array::from_fn(|j| jac[i][j].eval(&p.coords)))
}

/// Relative mismatch of `r·DΦ·v = X∘Φ` at `p`, where `v` is the
/// desingularized chart field and `X` the original fast-time field.
pub fn pushforward_error(atlas: &ChartAtlas, p: &ChartPoint) -> f64 {
    let v = atlas.eval(p);
    let jac = chart_map_jacobian(p);
    let r = p.radial();
    let z = blow_up(p);
    let x = crate::system::eval_fast_field(atlas.system(), &z, z.eps);
    let scale = x.iter().fold(0.0f64, |m, c| m.max(c.abs())).max(f64::MIN_POSITIVE);
    (0..NVARS)
        .map(|i| {
            let lhs: f64 = (0..NVARS).map(|k| jac[i][k] * v[k]).sum::<f64>() * r;
            (lhs - x[i]).abs()
        })
        .fold(0.0, f64::max)
        / scale
}

/// Where a named equilibrium lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EquilibriumChart {
    Atlas(ChartId),
    Slow(SlowChartId),
}

/// An equilibrium on the blow-up sphere with its numerical spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedEquilibrium {
    pub name: &'static str,
    pub chart: EquilibriumChart,
    pub coords: Vec<f64>,
    pub eigenvalues: Vec<Complex<f64>>,
    /// Max-norm of the chart field at `coords`.
    pub residual: f64,
}

fn spectrum<const N: usize>(m: &[[f64; N]; N]) -> Vec<Complex<f64>> {
    let dm = DMatrix::from_fn(N, N, |i, j| m[i][j]);
    let mut ev: Vec<Complex<f64>> = dm.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    ev
}

/// Polishes a seed with Newton steps while the Jacobian stays invertible.
fn polish<const N: usize>(field: &PolyField<N>, seed: [f64; N]) -> [f64; N] {
    let mut p = seed;
    for _ in 0..20 {
        let f = field.eval(&p);
        if f.iter().all(|v| v.abs() < 1e-15) {
            break;
        }
        let j = field.linearization(&p);
        let jm = DMatrix::from_fn(N, N, |i, k| j[i][k]);
        let rhs = DMatrix::from_fn(N, 1, |i, _| -f[i]);
        let Some(step) = jm.lu().solve(&rhs) else { break };
        let mut next = p;
        for i in 0..N {
            next[i] += step[(i, 0)];
        }
        let norm = |v: &[f64; N]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if norm(&field.eval(&next)) >= norm(&f) {
            break;
        }
        p = next;
    }
    p
}

fn named<const N: usize>(
    name: &'static str,
    chart: EquilibriumChart,
    field: &PolyField<N>,
    seed: [f64; N],
) -> NamedEquilibrium {
    let p = polish(field, seed);
    let residual = field.eval(&p).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    NamedEquilibrium {
        name,
        chart,
        coords: p.to_vec(),
        eigenvalues: spectrum(&field.linearization(&p)),
        residual,
    }
}

/// The equilibria `q₁, q₂` (chart `MinusY`), `q₄, q₅, q₆` (chart `Exit`) and
/// `ζ₁ … ζ₆` of the blown-up slow flow.
///
/// `ζ₂ … ζ₅` exist only when `B₀C₀ > 0`. `ζ₆` sits in the `+a` slow chart if
/// `B₀C₀ > 0` and in the `−a` slow chart otherwise.
pub fn named_equilibria(atlas: &ChartAtlas) -> Result<Vec<NamedEquilibrium>, BlowupError> {
    let sys = atlas.system();
    let (b0, c0) = (sys.b0(), sys.c0());
    if b0 * c0 == 0.0 {
        return Err(BlowupError::Degenerate);
    }
    let mut out = Vec::new();
    let fy = atlas.field(ChartId::MinusY);
    let fex = atlas.field(ChartId::Exit);
    let atl = |c| EquilibriumChart::Atlas(c);
    out.push(named("q1", atl(ChartId::MinusY), fy, [0.0; NVARS]));
    out.push(named("q2", atl(ChartId::MinusY), fy, [-1.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
    for (name, x5) in [("q4", -1.0), ("q5", 0.0), ("q6", 1.0)] {
        out.push(named(name, atl(ChartId::Exit), fex, [x5, 0.0, 0.0, 0.0, 0.0, 0.0]));
    }

    let sy = atlas.slow_field(SlowChartId::MinusY);
    let sl = |c| EquilibriumChart::Slow(c);
    out.push(named(
        "ζ1",
        sl(SlowChartId::MinusY),
        sy,
        [-(b0 * b0) / (c0 * c0), 0.0, -2.0 * b0 / c0],
    ));
    if b0 * c0 > 0.0 {
        let k = (b0 / c0).sqrt();
        let spy = atlas.slow_field(SlowChartId::PlusY);
        out.push(named("ζ2", sl(SlowChartId::MinusY), sy, [-k, 0.0, 0.0]));
        out.push(named("ζ3", sl(SlowChartId::MinusY), sy, [k, 0.0, 0.0]));
        out.push(named("ζ4", sl(SlowChartId::PlusY), spy, [-k, 0.0, 0.0]));
        out.push(named("ζ5", sl(SlowChartId::PlusY), spy, [k, 0.0, 0.0]));
        let spa = atlas.slow_field(SlowChartId::PlusA);
        out.push(named(
            "ζ6",
            sl(SlowChartId::PlusA),
            spa,
            [b0 / (2.0 * c0), c0 / (2.0 * b0), 0.0],
        ));
    } else {
        let sma = atlas.slow_field(SlowChartId::MinusA);
        out.push(named(
            "ζ6",
            sl(SlowChartId::MinusA),
            sma,
            [-b0 / (2.0 * c0), -c0 / (2.0 * b0), 0.0],
        ));
    }
    Ok(out)
}

/// Velocity of the blown-up slow flow in `(x₁, r₁, a₁)` with its orientation flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlownSlowVelocity {
    pub velocity: [f64; 3],
    /// Set in the saddle-type region `4x₁ + a₁² > 0`, where the orientation
    /// has to be reversed.
    pub reversed: bool,
}

impl BlownSlowVelocity {
    /// Velocity with the orientation correction applied.
    pub fn oriented(&self) -> [f64; 3] {
        if self.reversed {
            self.velocity.map(|v| -v)
        } else {
            self.velocity
        }
    }
}

/// Closed-form blown-up slow flow in the `−y` direction.
pub fn blown_slow_flow_y1(sys: &FastSlowSystem, p: [f64; 3]) -> BlownSlowVelocity {
    let [x1, r1, a1] = p;
    let [ga, gb, gc] = g_tilde(sys, &SlowState::new(r1 * x1, -r1, r1 * a1));
    let j = a1 * gb - 2.0 * x1 * gc - r1 * (a1 + 2.0 * x1 * x1) * ga;
    BlownSlowVelocity {
        velocity: [
            a1 * gc + 2.0 * gb + r1 * (a1 * x1 - 2.0) * ga + x1 * j,
            -r1 * j,
            a1 * j - r1 * (4.0 * x1 + a1 * a1) * ga,
        ],
        reversed: 4.0 * x1 + a1 * a1 > 0.0,
    }
}

/// Closed-form transition of `x₅` along the exit plane from `r₅ = ρν` to
/// `r₅ = ν`, i.e. the flow of `x₅' = x₅(1 − x₅²)/(1 + x₅²)` over time `ln(1/ρ)`.
pub fn exit_transition_x5(x_k: f64, rho: f64) -> f64 {
    if x_k == 0.0 {
        return 0.0;
    }
    if x_k < 0.0 {
        return -exit_transition_x5(-x_k, rho);
    }
    if x_k == 1.0 {
        return 1.0;
    }
    let k = (1.0 - x_k * x_k).abs() / (2.0 * x_k) * rho;
    let root = (k * k + 1.0).sqrt();
    if x_k < 1.0 {
        // −k + √(k² + 1) written without cancellation.
        1.0 / (k + root)
    } else {
        k + root
    }
}

/// Type of the folded singularity of the reduced flows in the `±a` charts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FoldedType {
    FoldedSaddle,
    FoldedCenter,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FoldedSingularity {
    pub point: [f64; 2],
    pub kind: FoldedType,
    pub eigenvalues: [Complex<f64>; 2],
    /// Slopes `dx/dy` of the two invariant lines through a folded saddle.
    pub slopes: Option<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FoldedFlow {
    pub velocity: [f64; 2],
    pub singularity: FoldedSingularity,
}

/// Linear desingularized slow flow `U` (chart `MinusA`) or `Q` (chart
/// `PlusA`) on the critical manifold of the chart's layer problem.
pub fn folded_flows(sys: &FastSlowSystem, chart: ChartId, uv: [f64; 2]) -> Result<FoldedFlow, BlowupError> {
    let sign = match chart {
        ChartId::PlusA => 1.0,
        ChartId::MinusA => -1.0,
        other => return Err(BlowupError::WrongChart(other)),
    };
    let (b0, c0) = (sys.b0(), sys.c0());
    if b0 * c0 == 0.0 {
        return Err(BlowupError::Degenerate);
    }
    let [u, v] = uv;
    let velocity = [-2.0 * b0 * v + sign * c0, -2.0 * c0 * u + sign * b0];
    let point = [sign * b0 / (2.0 * c0), sign * c0 / (2.0 * b0)];
    let prod = b0 * c0;
    let mu = 2.0 * prod.abs().sqrt();
    let (kind, eigenvalues, slopes) = if prod > 0.0 {
        let k = (b0 / c0).sqrt();
        (
            FoldedType::FoldedSaddle,
            [Complex::new(mu, 0.0), Complex::new(-mu, 0.0)],
            Some([k, -k]),
        )
    } else {
        (
            FoldedType::FoldedCenter,
            [Complex::new(0.0, mu), Complex::new(0.0, -mu)],
            None,
        )
    };
    Ok(FoldedFlow {
        velocity,
        singularity: FoldedSingularity {
            point,
            kind,
            eigenvalues,
            slopes,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    fn sys() -> FastSlowSystem {
        FastSlowSystem::constant(-1.0, 2.0, 1.0)
    }

    #[test]
    fn blow_up_minus_y_example() {
        let p = ChartPoint::new(ChartId::MinusY, [-1.4, 0.1, 0.0, 1.0, 1.0, 0.001]);
        let s = blow_up(&p);
        let want = [-0.14, -0.1, 0.0, 0.01, 0.01, 1e-6];
        for (g, w) in s.to_array().iter().zip(want) {
            assert!(close(*g, w, 1e-14), "{g} vs {w}");
        }
    }

    #[test]
    fn lift_signs_and_exit_diagonal() {
        let s = StateZ::new(0.3, 0.2, 0.1, 0.0, 0.0).with_eps(1e-3);
        let e = chart_lift(ChartId::Exit, &s).unwrap();
        assert!(close(e.coords[1], 0.25, 1e-15));
        assert!(close(e.coords[0], 0.2, 1e-14));
        assert_eq!(
            chart_lift(ChartId::MinusY, &s),
            Err(BlowupError::WrongSign(ChartId::MinusY))
        );
        let t = StateZ::new(0.3, -0.1, 0.1, 0.2, 0.3).with_eps(1e-3);
        let m = chart_lift(ChartId::MinusY, &t).unwrap();
        assert!(close(m.coords[1], 0.1, 1e-15));
        let back = blow_up(&m).to_array();
        for (g, w) in back.iter().zip(t.to_array()) {
            assert!(close(*g, w, 1e-13));
        }
    }

    #[test]
    fn coordinate_change_examples() {
        let p = ChartPoint::new(ChartId::MinusY, [-1.414, 0.1, 0.0, 0.3, 0.4, 0.001]);
        let q = coordinate_change(&p, ChartId::Eps).unwrap();
        assert!(close(q.coords[0], -14.14, 1e-12));
        assert!(close(q.coords[1], -10.0, 1e-12));
        assert!(close(q.coords[5], 0.01, 1e-12));
        let e = ChartPoint::new(ChartId::Eps, [10.0, 10.0, 0.0, 0.0, 0.0, 0.1]);
        let x = coordinate_change(&e, ChartId::Exit).unwrap();
        assert!(x.coords[0].abs() < 1e-15);
        assert!(close(x.coords[5], 0.001, 1e-13));
        let bad = ChartPoint::new(ChartId::MinusY, [0.0, 0.1, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            coordinate_change(&bad, ChartId::Eps),
            Err(BlowupError::NotInOverlap(ChartId::Eps))
        );
    }

    #[test]
    fn jacobian_determinants_are_monomials() {
        let want = [-1.0, 3.0, 1.0, -1.0, 2.0];
        for (c, w) in ChartId::ALL.iter().zip(want) {
            let (det, _) = det_and_adjugate(&jacobian(&c.map_polys()));
            let mut e = [0u8; NVARS];
            e[c.radial_slot()] = 9;
            assert_eq!(det.len(), 1, "{c:?}");
            assert!(close(det.coefficient(&e), w, 1e-14), "{c:?}");
        }
    }

    #[test]
    fn minus_y_field_on_sphere_matches_closed_form() {
        let atlas = ChartAtlas::new(&sys()).unwrap();
        for &(x1, a1, b1, c1) in &[(0.3, -0.2, 0.5, 0.1), (-1.2, 0.7, -0.4, 0.9)] {
            let p = ChartPoint::new(ChartId::MinusY, [x1, 0.0, a1, b1, c1, 0.0]);
            let v = atlas.eval(&p);
            let want = x1 * x1 - a1 + b1 + x1 * (1.0 + a1 * x1 + c1);
            assert!(close(v[0], want, 1e-13));
            let k = 1.0 + a1 * x1 + c1;
            assert!(close(v[2], a1 * k, 1e-13));
            assert!(close(v[3], 2.0 * b1 * k, 1e-13));
        }
    }

    #[test]
    fn eps_field_is_riccati_on_sphere() {
        let atlas = ChartAtlas::new(&sys()).unwrap();
        let p = ChartPoint::new(ChartId::Eps, [0.4, -0.3, 0.2, 0.1, -0.5, 0.0]);
        let v = atlas.eval(&p);
        assert!(close(v[0], 0.16 + 0.2 * -0.3 + 0.1, 1e-14));
        assert!(close(v[1], 0.09 + 0.2 * 0.4 - 0.5, 1e-14));
        assert!(close(v[2], 0.0, 1e-14));
        assert!(close(v[3], 2.0, 1e-14));
        assert!(close(v[4], 1.0, 1e-14));
        assert!(v[5].abs() < 1e-14);
    }

    #[test]
    fn exit_field_matches_closed_form() {
        let s = FastSlowSystem::from_strs("t", "-1 + b", "2 + x*y", "1", "x + a", "y*y").unwrap();
        let atlas = ChartAtlas::new(&s).unwrap();
        let p = [0.2, 0.3, -0.1, 0.4, -0.2, 0.5];
        let v = atlas.eval(&ChartPoint::new(ChartId::Exit, p));
        let [x5, r5, a5, b5, c5, e5] = p;
        let z = blow_up(&ChartPoint::new(ChartId::Exit, p)).to_array();
        let fx = s.f_x().eval(&z);
        let fy = s.f_y().eval(&z);
        let f = 1.0 + x5 * x5 + a5 + (b5 + c5) / 2.0 + r5 * e5 * (fx + fy) / 2.0;
        let want = [
            2.0 * x5 - a5 * x5 + (b5 - c5) / 2.0 - x5 * f + r5 * e5 * (fx - fy) / 2.0,
            r5 * f,
            -a5 * f + r5 * e5 * s.g_a().eval(&z),
            -2.0 * b5 * f + e5 * s.g_b().eval(&z),
            -2.0 * c5 * f + e5 * s.g_c().eval(&z),
            -3.0 * e5 * f,
        ];
        for (g, w) in v.iter().zip(want) {
            assert!(close(*g, w, 1e-12), "{g} vs {w}");
        }
    }

    #[test]
    fn pushforward_identity_sample() {
        let s = FastSlowSystem::from_strs("t", "-1 + c", "2 + a*x", "1 - y", "x*y", "b").unwrap();
        let atlas = ChartAtlas::new(&s).unwrap();
        for c in ChartId::ALL {
            let p = ChartPoint::new(c, [0.3, 0.7, 0.45, -0.2, 0.6, 0.35]);
            let v = atlas.eval(&p);
            let j = chart_map_jacobian(&p);
            let r = p.radial();
            let z = blow_up(&p);
            let x = crate::system::eval_fast_field(&s, &z, z.eps);
            for i in 0..NVARS {
                let lhs: f64 = (0..NVARS).map(|k| j[i][k] * v[k]).sum::<f64>() * r;
                assert!(close(lhs, x[i], 1e-12), "{c:?} {i}: {lhs} vs {}", x[i]);
            }
        }
    }

    #[test]
    fn exit_spectra_at_qs() {
        let atlas = ChartAtlas::new(&sys()).unwrap();
        let eq = named_equilibria(&atlas).unwrap();
        let get = |n: &str| eq.iter().find(|e| e.name == n).unwrap();
        let re = |e: &NamedEquilibrium| e.eigenvalues.iter().map(|z| z.re).collect::<Vec<_>>();
        let q5 = re(get("q5"));
        for (g, w) in q5.iter().zip([1.0, 1.0, -1.0, -2.0, -2.0, -3.0]) {
            assert!((g - w).abs() < 1e-9, "{q5:?}");
        }
        for n in ["q4", "q6"] {
            let v = re(get(n));
            for (g, w) in v.iter().zip([2.0, -2.0, -2.0, -4.0, -4.0, -6.0]) {
                assert!((g - w).abs() < 1e-9, "{n}: {v:?}");
            }
        }
        assert!(eq.iter().all(|e| e.residual < 1e-12));
    }

    #[test]
    fn zetas_for_b2_c1() {
        let atlas = ChartAtlas::new(&sys()).unwrap();
        let eq = named_equilibria(&atlas).unwrap();
        let get = |n: &str| eq.iter().find(|e| e.name == n).unwrap();
        let z2 = get("ζ2");
        assert!(close(z2.coords[0], -2f64.sqrt(), 1e-12));
        assert!(z2.coords[2].abs() < 1e-14);
        let z1 = get("ζ1");
        assert!(close(z1.coords[0], -4.0, 1e-12) && close(z1.coords[2], -4.0, 1e-12));
        let m = 2f64.sqrt();
        let ev: Vec<f64> = z2.eigenvalues.iter().map(|z| z.re).collect();
        for (g, w) in ev.iter().zip([4.0 * m, 2.0 * m, -2.0 * m]) {
            assert!((g - w).abs() < 1e-9, "{ev:?}");
        }
        assert_eq!(eq.len(), 11);
    }

    #[test]
    fn slow_chart_matches_closed_form() {
        let s = FastSlowSystem::from_strs("t", "-1 + x", "2 + b*a", "1 + c", "0", "0").unwrap();
        let atlas = ChartAtlas::new(&s).unwrap();
        for p in [[0.3, 0.2, -0.4], [-1.1, 0.05, 0.6], [0.7, 0.0, 0.3]] {
            let g = atlas.eval_slow(SlowChartId::MinusY, &p);
            let w = blown_slow_flow_y1(&s, p).velocity;
            for i in 0..3 {
                assert!(close(g[i], w[i], 1e-12), "{p:?}: {g:?} vs {w:?}");
            }
        }
    }

    #[test]
    fn u_flow_is_slow_chart_on_sphere() {
        let s = sys();
        let atlas = ChartAtlas::new(&s).unwrap();
        for (chart, slow) in [
            (ChartId::MinusA, SlowChartId::MinusA),
            (ChartId::PlusA, SlowChartId::PlusA),
        ] {
            let uv = [0.3, -0.7];
            let f = folded_flows(&s, chart, uv).unwrap();
            let g = atlas.eval_slow(slow, &[uv[0], uv[1], 0.0]);
            assert!(close(f.velocity[0], g[0], 1e-13) && close(f.velocity[1], g[1], 1e-13));
        }
        let u = folded_flows(&s, ChartId::MinusA, [0.0, 0.0]).unwrap();
        assert_eq!(u.singularity.point, [-1.0, -0.25]);
        assert_eq!(u.singularity.kind, FoldedType::FoldedSaddle);
        assert!(close(u.singularity.eigenvalues[0].re, 2.8284271247461903, 1e-14));
        let c = FastSlowSystem::constant(0.0, 1.0, -1.0);
        assert_eq!(
            folded_flows(&c, ChartId::MinusA, [0.0, 0.0]).unwrap().singularity.kind,
            FoldedType::FoldedCenter
        );
        assert_eq!(
            folded_flows(&s, ChartId::Eps, [0.0, 0.0]),
            Err(BlowupError::WrongChart(ChartId::Eps))
        );
    }

    #[test]
    fn exit_transition_values() {
        assert_eq!(exit_transition_x5(0.0, 0.3), 0.0);
        assert_eq!(exit_transition_x5(1.0, 0.3), 1.0);
        assert!((exit_transition_x5(0.5, 0.1) - 0.927808556006579).abs() < 1e-12);
        assert_eq!(exit_transition_x5(-0.5, 0.1), -exit_transition_x5(0.5, 0.1));
        assert!(close(exit_transition_x5(0.5, 1.0), 0.5, 1e-15));
        assert!(close(exit_transition_x5(2.0, 1.0), 2.0, 1e-15));
    }
}
