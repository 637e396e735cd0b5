//! Adaptive Dormand–Prince 5(4) integration with section detection.
//!
//! Fields are closures `f(t, y) -> y'` over fixed-size state arrays. Steps are
//! accepted when the embedded error estimate, measured in the mixed norm
//! `atol + rtol·|y|`, is at most one. Sections are located by bisection on the
//! bracketing step, re-integrating from the start of that step with a single
//! shorter step for every trial time.

use thiserror::Error;

/// Tolerances and limits for one integration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step size; `0` selects it automatically.
    pub h_init: f64,
    /// Largest admissible step size.
    pub h_max: f64,
    pub max_steps: usize,
    /// Integration stops with [`TerminalReason::Escape`] once `|y| > escape_radius`.
    pub escape_radius: f64,
    /// Store every accepted step; otherwise only the end points are kept.
    pub record: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-11,
            h_init: 0.0,
            h_max: f64::INFINITY,
            max_steps: 10_000_000,
            escape_radius: 1e3,
            record: true,
        }
    }
}

impl IntegratorConfig {
    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn without_recording(mut self) -> Self {
        self.record = false;
        self
    }
}

/// Why an integration stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerminalReason {
    TimeEnd,
    EventHit,
    Escape,
    StepFail,
}

/// Sampled solution.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<const N: usize> {
    pub times: Vec<f64>,
    pub states: Vec<[f64; N]>,
    pub terminal_reason: TerminalReason,
}

impl<const N: usize> Trajectory<N> {
    pub fn last_state(&self) -> &[f64; N] {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Integration failures.
#[derive(Clone, Debug, PartialEq, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t}")]
    StepFail { t: f64 },
    #[error("maximum number of steps exceeded at t = {t}")]
    MaxSteps { t: f64 },
    #[error("no section crossing before the integration stopped ({reason:?} at t = {t})")]
    NoEvent {
        t: f64,
        reason: TerminalReason,
        last: Vec<f64>,
    },
    #[error("invalid time span")]
    InvalidSpan,
}

/// Sign condition for a section crossing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// The event function increases through zero.
    Rising,
    /// The event function decreases through zero.
    Falling,
    Any,
}

impl Direction {
    fn crosses(self, g0: f64, g1: f64) -> bool {
        match self {
            Direction::Rising => g0 <= 0.0 && g1 > 0.0,
            Direction::Falling => g0 >= 0.0 && g1 < 0.0,
            Direction::Any => (g0 <= 0.0 && g1 > 0.0) || (g0 >= 0.0 && g1 < 0.0),
        }
    }
}

/// Result of [`integrate_to_event`].
#[derive(Clone, Debug, PartialEq)]
pub struct EventHit<const N: usize> {
    pub state: [f64; N],
    pub t: f64,
    pub trajectory: Trajectory<N>,
}

/// Residual below which a section is considered hit.
pub const EVENT_TOL: f64 = 1e-12;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the fifth- and fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (w, k) in terms {
        for i in 0..N {
            out[i] += h * w * k[i];
        }
    }
    out
}

/// One Dormand–Prince step: returns the fifth-order solution, its derivative
/// (first-same-as-last) and the error vector.
fn dp_step<F, const N: usize>(f: &F, t: f64, y: &[f64; N], k1: &[f64; N], h: f64) -> ([f64; N], [f64; N], [f64; N])
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let k2 = f(t + C2 * h, &axpy(y, h, &[(A21, k1)]));
    let k3 = f(t + C3 * h, &axpy(y, h, &[(A31, k1), (A32, &k2)]));
    let k4 = f(t + C4 * h, &axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]));
    let k5 = f(
        t + C5 * h,
        &axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
    );
    let k6 = f(
        t + h,
        &axpy(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
    );
    let y_new = axpy(y, h, &[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
    let k7 = f(t + h, &y_new);
    let mut err = [0.0; N];
    for i in 0..N {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    (y_new, k7, err)
}

fn error_norm<const N: usize>(err: &[f64; N], y0: &[f64; N], y1: &[f64; N], cfg: &IntegratorConfig) -> f64 {
    let mut s = 0.0;
    for i in 0..N {
        let sc = cfg.atol + cfg.rtol * y0[i].abs().max(y1[i].abs());
        s += (err[i] / sc).powi(2);
    }
    (s / N as f64).sqrt()
}

fn norm<const N: usize>(y: &[f64; N]) -> f64 {
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn initial_step<F, const N: usize>(
    f: &F,
    t0: f64,
    y0: &[f64; N],
    f0: &[f64; N],
    dir: f64,
    span: f64,
    cfg: &IntegratorConfig,
) -> f64
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    if cfg.h_init > 0.0 {
        return cfg.h_init.min(span);
    }
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..N {
        let sc = cfg.atol + cfg.rtol * y0[i].abs();
        d0 += (y0[i] / sc).powi(2);
        d1 += (f0[i] / sc).powi(2);
    }
    d0 = (d0 / N as f64).sqrt();
    d1 = (d1 / N as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1 = axpy(y0, dir * h0, &[(1.0, f0)]);
    let f1 = f(t0 + dir * h0, &y1);
    let mut d2 = 0.0;
    for i in 0..N {
        let sc = cfg.atol + cfg.rtol * y0[i].abs();
        d2 += ((f1[i] - f0[i]) / sc).powi(2);
    }
    d2 = (d2 / N as f64).sqrt() / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span).min(cfg.h_max)
}

enum Stop<const N: usize> {
    TimeEnd,
    Escape,
    Event { t: f64, y: [f64; N] },
}

fn run<F, G, const N: usize>(
    f: &F,
    y0: &[f64; N],
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
    event: Option<(&G, Direction)>,
) -> Result<(Trajectory<N>, Stop<N>), OdeError>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    G: Fn(f64, &[f64; N]) -> f64,
{
    let (t0, t1) = t_span;
    if !(t0.is_finite() && t1.is_finite()) || t0 == t1 {
        return Err(OdeError::InvalidSpan);
    }
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let h_min = 1e-14 * span;
    let mut t = t0;
    let mut y = *y0;
    let mut k1 = f(t, &y);
    let mut traj = Trajectory {
        times: vec![t],
        states: vec![y],
        terminal_reason: TerminalReason::TimeEnd,
    };
    if norm(&y) > cfg.escape_radius || !y.iter().all(|v| v.is_finite()) {
        traj.terminal_reason = TerminalReason::Escape;
        return Ok((traj, Stop::Escape));
    }
    let mut g_old = event.map(|(g, _)| g(t, &y));
    if let Some(g0) = g_old {
        if g0.abs() < EVENT_TOL {
            traj.terminal_reason = TerminalReason::EventHit;
            return Ok((traj, Stop::Event { t, y }));
        }
    }
    let mut h = initial_step(f, t0, &y, &k1, dir, span, cfg);
    let mut steps = 0usize;
    loop {
        if steps >= cfg.max_steps {
            return Err(OdeError::MaxSteps { t });
        }
        let remaining = (t1 - t).abs();
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let (y_new, k7, err) = dp_step(f, t, &y, &k1, dir * h);
        let en = error_norm(&err, &y, &y_new, cfg);
        let finite = en.is_finite() && y_new.iter().all(|v| v.is_finite());
        if !finite || en > 1.0 {
            let factor = if finite { (0.9 * en.powf(-0.2)).max(0.2) } else { 0.25 };
            h *= factor;
            if h < h_min {
                if !finite {
                    traj.terminal_reason = TerminalReason::Escape;
                    return Ok((traj, Stop::Escape));
                }
                traj.terminal_reason = TerminalReason::StepFail;
                return Err(OdeError::StepFail { t });
            }
            continue;
        }
        steps += 1;
        let t_new = if last { t1 } else { t + dir * h };
        if let (Some((g, d)), Some(g0)) = (event, g_old) {
            let g1 = g(t_new, &y_new);
            if d.crosses(g0, g1) {
                let (th, yh) = refine_event(f, g, t, &y, &k1, t_new - t, g0, d);
                traj.times.push(th);
                traj.states.push(yh);
                traj.terminal_reason = TerminalReason::EventHit;
                return Ok((traj, Stop::Event { t: th, y: yh }));
            }
            g_old = Some(g1);
        }
        t = t_new;
        y = y_new;
        k1 = k7;
        if cfg.record {
            traj.times.push(t);
            traj.states.push(y);
        }
        if norm(&y) > cfg.escape_radius {
            if !cfg.record {
                traj.times.push(t);
                traj.states.push(y);
            }
            traj.terminal_reason = TerminalReason::Escape;
            return Ok((traj, Stop::Escape));
        }
        if last {
            if !cfg.record {
                traj.times.push(t);
                traj.states.push(y);
            }
            return Ok((traj, Stop::TimeEnd));
        }
        let factor = if en == 0.0 {
            5.0
        } else {
            (0.9 * en.powf(-0.2)).clamp(0.2, 5.0)
        };
        h = (h * factor).min(cfg.h_max);
    }
}

/// Bisection on the fraction of the bracketing step.
#[allow(clippy::too_many_arguments)]
fn refine_event<F, G, const N: usize>(
    f: &F,
    g: &G,
    t: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
    g0: f64,
    d: Direction,
) -> (f64, [f64; N])
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    G: Fn(f64, &[f64; N]) -> f64,
{
    if g0 == 0.0 {
        return (t, *y);
    }
    let rising = match d {
        Direction::Rising => true,
        Direction::Falling => false,
        Direction::Any => g0 < 0.0,
    };
    let mut lo = 0.0;
    let mut hi = h;
    let mut best = (t + h, dp_step(f, t, y, k1, h).0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let ym = dp_step(f, t, y, k1, mid).0;
        let gm = g(t + mid, &ym);
        best = (t + mid, ym);
        if gm.abs() < EVENT_TOL || (hi - lo).abs() < 1e-14 {
            break;
        }
        if (gm < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best
}

/// Integrates over `t_span` (backward if `t1 < t0`).
///
/// Stops early with [`TerminalReason::Escape`] when the state leaves the
/// escape ball or becomes non-finite.
pub fn integrate<F, const N: usize>(
    field: F,
    s0: &[f64; N],
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<Trajectory<N>, OdeError>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let none: Option<(&fn(f64, &[f64; N]) -> f64, Direction)> = None;
    run(&field, s0, t_span, cfg, none).map(|(traj, _)| traj)
}

/// Integrates until `event(t, y)` crosses zero in the given direction.
///
/// A start point already on the section (`|event| < EVENT_TOL`) counts as an
/// immediate hit, so re-running from a returned hit state is idempotent.
pub fn integrate_to_event<F, G, const N: usize>(
    field: F,
    s0: &[f64; N],
    t_span: (f64, f64),
    event: G,
    direction: Direction,
    cfg: &IntegratorConfig,
) -> Result<EventHit<N>, OdeError>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    G: Fn(f64, &[f64; N]) -> f64,
{
    let (traj, stop) = run(&field, s0, t_span, cfg, Some((&event, direction)))?;
    match stop {
        Stop::Event { t, y } => Ok(EventHit {
            state: y,
            t,
            trajectory: traj,
        }),
        _ => Err(OdeError::NoEvent {
            t: traj.last_time(),
            reason: traj.terminal_reason,
            last: traj.last_state().to_vec(),
        }),
    }
}
