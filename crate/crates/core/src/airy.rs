//! Airy functions and the Riccati equations of the rescaling chart.
//!
//! On the blow-up sphere with `a₂ = 0` the rescaling chart decouples into two
//! Riccati equations `x₂' = x₂² + B₀t`, `y₂' = y₂² + C₀(t + s)`. The solutions
//! are quotients of Airy functions; the one built from `Ai` alone is the
//! dividing solution, which is backward asymptotic to the attracting branch
//! `x₂ ≈ −√(−B₀t)` of the parabola. Its blow-up time is fixed by the first zero
//! `z₀` of `Ai`, which in turn decides where the family `γ_s` exits the sphere.
//!
//! `Ai` and `Bi` are evaluated by their Maclaurin series for `|z| ≤ 8` (summed
//! in double-double arithmetic, since the two series cancel to about 1e-14 of
//! their size at `z = 8`) and by 12-term asymptotic expansions beyond.

use std::f64::consts::PI;
use std::sync::OnceLock;

use thiserror::Error;

/// Lower end of the supported argument range.
pub const AIRY_Z_MIN: f64 = -50.0;
/// Upper end of the supported argument range.
pub const AIRY_Z_MAX: f64 = 30.0;
/// Switch from the Maclaurin series to asymptotic expansions.
pub const AIRY_SERIES_LIMIT: f64 = 8.0;
/// Number of correction terms in the asymptotic expansions.
const ASYMPTOTIC_TERMS: usize = 12;
/// Denominators smaller than this count as a pole of a Riccati solution.
pub const ASYMPTOTE_TOL: f64 = 1e-13;
/// `|s − s₀|` below which a family member counts as the separatrix.
pub const S_CRITICAL_TOL: f64 = 1e-12;

/// `Ai(0)` split into a double-double pair.
const AI0: Dd = Dd {
    hi: 0.3550280538878172,
    lo: 2.05233632436212e-17,
};
/// `−Ai'(0)` split into a double-double pair.
const AIP0_NEG: Dd = Dd {
    hi: 0.2588194037928068,
    lo: -2.522243111610832e-17,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AiryError {
    #[error("argument {0} outside the supported range [-50, 30]")]
    OutOfRange(f64),
    #[error("Riccati solution has a pole at t = {0}")]
    AtAsymptote(f64),
    #[error("t = {t} is past the blow-up time {limit}")]
    BeyondBlowupTime { t: f64, limit: f64 },
    #[error("parameter must be positive, got {0}")]
    NonPositive(f64),
}

/// `Ai`, `Ai'`, `Bi`, `Bi'` at one real argument.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AiryEval {
    pub ai: f64,
    pub aip: f64,
    pub bi: f64,
    pub bip: f64,
}

impl AiryEval {
    /// `Ai·Bi' − Ai'·Bi`, which equals `1/π`.
    pub fn wronskian(&self) -> f64 {
        self.ai * self.bip - self.aip * self.bi
    }
}

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Clone, Copy, Debug)]
struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    fn from_f64(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }

    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    fn div_f64(self, d: f64) -> Dd {
        let q1 = self.hi / d;
        let (p, e) = two_prod(q1, d);
        let r = ((self.hi - p) - e) + self.lo;
        let (hi, lo) = quick_two_sum(q1, r / d);
        Dd { hi, lo }
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// The two Maclaurin series `f, g` of the Airy equation and their derivatives,
/// with `Ai = c₁f − c₂g` and `Bi = √3(c₁f + c₂g)`.
fn maclaurin(z: f64) -> [Dd; 4] {
    let zd = Dd::from_f64(z);
    let z3 = zd.mul(zd).mul(zd);
    let mut f_t = Dd::from_f64(1.0);
    let mut g_t = zd;
    let mut fp_t = zd.mul(zd).div_f64(2.0);
    let mut gp_t = Dd::from_f64(1.0);
    let (mut f, mut g, mut fp, mut gp) = (f_t, g_t, fp_t, gp_t);
    for k in 1..200usize {
        let k3 = 3.0 * k as f64;
        f_t = f_t.mul(z3).div_f64((k3 - 1.0) * k3);
        g_t = g_t.mul(z3).div_f64(k3 * (k3 + 1.0));
        gp_t = gp_t.mul(z3).div_f64(k3 * (k3 - 2.0));
        if k >= 2 {
            fp_t = fp_t.mul(z3).div_f64((k3 - 1.0) * (k3 - 3.0));
        }
        f = f.add(f_t);
        g = g.add(g_t);
        gp = gp.add(gp_t);
        if k >= 2 {
            fp = fp.add(fp_t);
        }
        let small = |t: Dd, s: Dd| t.hi.abs() <= 1e-34 * s.hi.abs().max(1e-300);
        if k >= 2 && small(f_t, f) && small(g_t, g) && small(fp_t, fp) && small(gp_t, gp) {
            break;
        }
    }
    [f, g, fp, gp]
}

fn series_eval(z: f64) -> AiryEval {
    let [f, g, fp, gp] = maclaurin(z);
    let sqrt3 = 3f64.sqrt();
    let (c1f, c2g) = (AI0.mul(f), AIP0_NEG.mul(g));
    let (c1fp, c2gp) = (AI0.mul(fp), AIP0_NEG.mul(gp));
    AiryEval {
        ai: c1f.add(c2g.neg()).to_f64(),
        aip: c1fp.add(c2gp.neg()).to_f64(),
        bi: sqrt3 * c1f.add(c2g).to_f64(),
        bip: sqrt3 * c1fp.add(c2gp).to_f64(),
    }
}

/// Coefficients `u_k`, `v_k` of the asymptotic expansions.
fn asymptotic_coefficients() -> &'static ([f64; ASYMPTOTIC_TERMS + 1], [f64; ASYMPTOTIC_TERMS + 1]) {
    static COEFFS: OnceLock<([f64; ASYMPTOTIC_TERMS + 1], [f64; ASYMPTOTIC_TERMS + 1])> = OnceLock::new();
    COEFFS.get_or_init(|| {
        let mut u = [0.0; ASYMPTOTIC_TERMS + 1];
        let mut v = [0.0; ASYMPTOTIC_TERMS + 1];
        u[0] = 1.0;
        v[0] = 1.0;
        for k in 1..=ASYMPTOTIC_TERMS {
            let kf = k as f64;
            u[k] = u[k - 1] * (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0) / ((2.0 * kf - 1.0) * 216.0 * kf);
            v[k] = -(6.0 * kf + 1.0) / (6.0 * kf - 1.0) * u[k];
        }
        (u, v)
    })
}

/// Exponentially scaled values for `z > 8`: `Ai, Ai'` times `e^ζ` and
/// `Bi, Bi'` times `e^{−ζ}`, with `ζ = (2/3) z^{3/2}`.
fn asymptotic_positive_scaled(z: f64) -> (AiryEval, f64) {
    let (u, v) = asymptotic_coefficients();
    let zeta = 2.0 / 3.0 * z.powf(1.5);
    let (mut su_alt, mut sv_alt, mut su, mut sv) = (0.0, 0.0, 0.0, 0.0);
    let mut p = 1.0;
    for k in 0..=ASYMPTOTIC_TERMS {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        su += u[k] * p;
        sv += v[k] * p;
        su_alt += sign * u[k] * p;
        sv_alt += sign * v[k] * p;
        p /= zeta;
    }
    let q = z.powf(0.25);
    let sp = PI.sqrt();
    let scaled = AiryEval {
        ai: su_alt / (2.0 * sp * q),
        aip: -q * sv_alt / (2.0 * sp),
        bi: su / (sp * q),
        bip: q * sv / sp,
    };
    (scaled, zeta)
}

fn asymptotic_positive(z: f64) -> AiryEval {
    let (e, zeta) = asymptotic_positive_scaled(z);
    let (em, ep) = ((-zeta).exp(), zeta.exp());
    AiryEval {
        ai: e.ai * em,
        aip: e.aip * em,
        bi: e.bi * ep,
        bip: e.bip * ep,
    }
}

fn asymptotic_negative(z: f64) -> AiryEval {
    let (u, v) = asymptotic_coefficients();
    let x = -z;
    let zeta = 2.0 / 3.0 * x.powf(1.5);
    // Even and odd parts of the alternating sums.
    let (mut ue, mut uo, mut ve, mut vo) = (0.0, 0.0, 0.0, 0.0);
    let mut p = 1.0;
    for k in 0..=ASYMPTOTIC_TERMS {
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            ue += sign * u[k] * p;
            ve += sign * v[k] * p;
        } else {
            uo += sign * u[k] * p;
            vo += sign * v[k] * p;
        }
        p /= zeta;
    }
    let q = x.powf(0.25);
    let sp = PI.sqrt();
    let (s, c) = (zeta - PI / 4.0).sin_cos();
    AiryEval {
        ai: (c * ue + s * uo) / (sp * q),
        aip: q * (s * ve - c * vo) / sp,
        bi: (-s * ue + c * uo) / (sp * q),
        bip: q * (c * ve + s * vo) / sp,
    }
}

/// `Ai, Ai', Bi, Bi'` at `z ∈ [−50, 30]`.
pub fn airy(z: f64) -> Result<AiryEval, AiryError> {
    if !(AIRY_Z_MIN..=AIRY_Z_MAX).contains(&z) {
        return Err(AiryError::OutOfRange(z));
    }
    Ok(if z.abs() <= AIRY_SERIES_LIMIT {
        series_eval(z)
    } else if z > 0.0 {
        asymptotic_positive(z)
    } else {
        asymptotic_negative(z)
    })
}

/// First (least negative) zero `z₀ ≈ −2.3381` of `Ai`.
pub fn airy_first_zero() -> f64 {
    static Z0: OnceLock<f64> = OnceLock::new();
    *Z0.get_or_init(|| {
        let ai = |z: f64| series_eval(z).ai;
        let (mut lo, mut hi) = (-3.0, -2.0);
        debug_assert!(ai(lo) < 0.0 && ai(hi) > 0.0);
        while hi - lo > 1e-15 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if ai(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    })
}

/// Parameter selecting one solution of `x' = x² + B₀t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RiccatiBranch {
    /// `B̃(d Ai' + Bi')/(d Ai + Bi)` at `−B̃t` for finite `d`.
    Finite(f64),
    /// The dividing solution `B̃ Ai'/Ai`.
    Dividing,
}

/// Solution of `x' = x² + B₀t` selected by `branch`, with `B̃ = B₀^{1/3}`.
///
/// For `−B̃t > 8` the quotient is formed from exponentially scaled asymptotic
/// expansions, so arbitrarily negative `t` is fine; `−B̃t < −50` is out of range.
pub fn dividing_solution(b0: f64, t: f64, branch: RiccatiBranch) -> Result<f64, AiryError> {
    if b0 <= 0.0 {
        return Err(AiryError::NonPositive(b0));
    }
    let bt = b0.cbrt();
    let z = -bt * t;
    let (num, den) = if z > AIRY_SERIES_LIMIT {
        // Work with exponentially scaled values so that large `−t` neither
        // overflows `Bi` nor underflows `Ai`.
        let (e, zeta) = asymptotic_positive_scaled(z);
        match branch {
            RiccatiBranch::Dividing => (e.aip, e.ai),
            RiccatiBranch::Finite(d) => {
                let w = (-2.0 * zeta).exp();
                (d * w * e.aip + e.bip, d * w * e.ai + e.bi)
            }
        }
    } else {
        let e = airy(z)?;
        match branch {
            RiccatiBranch::Dividing => (e.aip, e.ai),
            RiccatiBranch::Finite(d) => (d * e.aip + e.bip, d * e.ai + e.bi),
        }
    };
    if den.abs() < ASYMPTOTE_TOL {
        return Err(AiryError::AtAsymptote(t));
    }
    Ok(bt * num / den)
}

/// Blow-up time `−z₀/K^{1/3}` of the dividing solution with drift `K`.
pub fn blowup_time(k: f64) -> f64 {
    -airy_first_zero() / k.cbrt()
}

/// One member of the family `γ_s` of Riccati solutions on the sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaState {
    pub x2: f64,
    pub y2: f64,
    pub a2: f64,
    pub b2: f64,
    pub c2: f64,
    pub s: f64,
    pub t: f64,
}

/// `γ_s(t) = (x(t), y(t + s), 0, B₀t, C₀(t + s))` with `x, y` the dividing
/// solutions for `B₀` and `C₀`.
pub fn gamma_family(b0: f64, c0: f64, s: f64, t: f64) -> Result<GammaState, AiryError> {
    for k in [b0, c0] {
        if k <= 0.0 {
            return Err(AiryError::NonPositive(k));
        }
    }
    let limit = blowup_time(b0).min(blowup_time(c0) - s);
    if t >= limit {
        return Err(AiryError::BeyondBlowupTime { t, limit });
    }
    Ok(GammaState {
        x2: dividing_solution(b0, t, RiccatiBranch::Dividing)?,
        y2: dividing_solution(c0, t + s, RiccatiBranch::Dividing)?,
        a2: 0.0,
        b2: b0 * t,
        c2: c0 * (t + s),
        s,
        t,
    })
}

/// The exit-chart equilibrium a family member converges to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExitTarget {
    /// `x₅ = −1`: `y₂` blows up first, exit along the `y`-axis.
    Q4,
    /// `x₅ = 0`: both blow up together.
    Q5,
    /// `x₅ = +1`: `x₂` blows up first, exit along the `x`-axis.
    Q6,
}

impl ExitTarget {
    pub fn name(self) -> &'static str {
        match self {
            ExitTarget::Q4 => "q4",
            ExitTarget::Q5 => "q5",
            ExitTarget::Q6 => "q6",
        }
    }

    /// The `x₅` coordinate of the equilibrium.
    pub fn x5(self) -> f64 {
        match self {
            ExitTarget::Q4 => -1.0,
            ExitTarget::Q5 => 0.0,
            ExitTarget::Q6 => 1.0,
        }
    }
}

/// Threshold `s₀ = (B₀^{−1/3} − C₀^{−1/3}) z₀`.
pub fn s_critical(b0: f64, c0: f64) -> f64 {
    (1.0 / b0.cbrt() - 1.0 / c0.cbrt()) * airy_first_zero()
}

/// Forward asymptotics of `γ_s` by comparing the blow-up times `M` and `N − s`.
pub fn classify_gamma(b0: f64, c0: f64, s: f64) -> Result<ExitTarget, AiryError> {
    for k in [b0, c0] {
        if k <= 0.0 {
            return Err(AiryError::NonPositive(k));
        }
    }
    let s0 = s_critical(b0, c0);
    Ok(if (s - s0).abs() <= S_CRITICAL_TOL {
        ExitTarget::Q5
    } else if s > s0 {
        ExitTarget::Q4
    } else {
        ExitTarget::Q6
    })
}
