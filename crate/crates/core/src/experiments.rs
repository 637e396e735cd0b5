//! End-to-end passage experiments in original coordinates.
//!
//! Seeds are placed on the attracting sheet of the critical manifold in the
//! entry section `{y = −ν}` around the point where the singular slow
//! trajectory σ crosses it. Each seed is integrated in fast time with `ε`
//! fixed until it reaches the exit section `{x + y = 2ν}`. The exit
//! coordinate `x₅ = (x − y)/(x + y)` shows where the trajectory left the
//! blown-up umbilic: near `−1` along the `y`-axis, near `+1` along the
//! `x`-axis, and anywhere in between for the thin set of trajectories that
//! follow the separatrix through the centre of the fan.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::geometry::{psi, stratify, StratumLabel, STRATIFY_TOL};
use crate::ode::{integrate_to_event, Direction, EventHit, IntegratorConfig, OdeError, TerminalReason, Trajectory};
use crate::slow_flow::{sigma_trajectory, SlowFlowError, SlowState, SIGMA_DELTA0};
use crate::system::{system_to_toml, ConfigError, FastSlowSystem, StateZ, SystemSection};

pub const DEFAULT_NU: f64 = 0.25;
pub const DEFAULT_TAU: f64 = 0.05;
pub const DEFAULT_SEEDS: usize = 64;
/// Half-width of the seed rectangle along `x`.
pub const DEFAULT_W_X: f64 = 0.05;
/// Half-width of the seed rectangle along `a`, in units of `ε^{1/3}`.
pub const DEFAULT_K_A: f64 = 0.1;
/// Values of `ε` above this are accepted with a warning.
pub const EPS_WARN: f64 = 0.05;
/// Maximum number of bisection steps when aiming at the interior of the fan.
pub const AIM_MAX_STEPS: usize = 60;
/// `|x₅|` at or below which an exit counts as interior.
pub const AIM_TARGET: f64 = 0.5;
/// Exit magnitudes below this make a scaling fit meaningless.
pub const FIT_FLOOR: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("slow trajectory σ: {0}")]
    Sigma(#[from] SlowFlowError),
    #[error("seed {index} at (x, a) = ({x}, {a}) is not on the attracting sheet")]
    SeedNotAttracting { index: usize, x: f64, a: f64 },
    #[error("no exit crossing ({reason:?} at t = {t}); last state {last:?}")]
    NoEvent {
        t: f64,
        reason: TerminalReason,
        last: StateZ,
    },
    #[error("integration failed: {0}")]
    Ode(OdeError),
    #[error("no pair of exits straddles the fan")]
    NoStraddle,
    #[error("exit magnitude of `{component}` is {value:e} at eps = {eps:e}; cannot fit a power law")]
    DegenerateFit {
        component: &'static str,
        eps: f64,
        value: f64,
    },
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

/// Layout of the seed rectangle on the entry section.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedSpec {
    pub count: usize,
    pub w_x: f64,
    pub k_a: f64,
}

impl Default for SeedSpec {
    fn default() -> Self {
        Self {
            count: DEFAULT_SEEDS,
            w_x: DEFAULT_W_X,
            k_a: DEFAULT_K_A,
        }
    }
}

/// Everything needed to run a passage experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub sys: FastSlowSystem,
    pub eps: f64,
    pub nu: f64,
    pub tau: f64,
    pub seeds: SeedSpec,
    pub integrator: IntegratorConfig,
}

/// Raw `[run]` table.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    eps: f64,
    nu: Option<f64>,
    tau: Option<f64>,
    seeds: Option<usize>,
    rtol: Option<f64>,
    atol: Option<f64>,
    w_x: Option<f64>,
    k_a: Option<f64>,
}

#[derive(Deserialize)]
struct RunDoc {
    system: Option<SystemSection>,
    run: Option<RunSection>,
}

impl RunConfig {
    /// Defaults for everything except the system and `ε`.
    pub fn new(sys: FastSlowSystem, eps: f64) -> Self {
        Self {
            sys,
            eps,
            nu: DEFAULT_NU,
            tau: DEFAULT_TAU,
            seeds: SeedSpec::default(),
            integrator: IntegratorConfig::default().without_recording(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidConfig(m));
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad(format!("nu must be positive, got {}", self.nu));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1), got {}", self.tau));
        }
        if self.seeds.count == 0 {
            return bad("seeds must be at least 1".into());
        }
        if !(self.integrator.rtol > 0.0 && self.integrator.atol > 0.0) {
            return bad("rtol and atol must be positive".into());
        }
        if self.eps > EPS_WARN {
            log::warn!("eps = {} is not small; the passage picture may not apply", self.eps);
        }
        Ok(())
    }

    /// Reads `[system]` and `[run]` from configuration text.
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let doc: RunDoc = toml::from_str(text).map_err(ConfigError::from)?;
        let sys = doc.system.ok_or(ConfigError::MissingSection("system"))?.build()?;
        let run = doc.run.ok_or(ConfigError::MissingSection("run"))?;
        let mut cfg = RunConfig::new(sys, run.eps);
        cfg.nu = run.nu.unwrap_or(cfg.nu);
        cfg.tau = run.tau.unwrap_or(cfg.tau);
        cfg.seeds.count = run.seeds.unwrap_or(cfg.seeds.count);
        cfg.seeds.w_x = run.w_x.unwrap_or(cfg.seeds.w_x);
        cfg.seeds.k_a = run.k_a.unwrap_or(cfg.seeds.k_a);
        cfg.integrator.rtol = run.rtol.unwrap_or(cfg.integrator.rtol);
        cfg.integrator.atol = run.atol.unwrap_or(cfg.integrator.atol);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Configuration text that [`RunConfig::from_toml`] reads back unchanged.
    pub fn to_toml(&self) -> String {
        let mut out = system_to_toml(&self.sys);
        out.push_str("\n[run]\n");
        for (k, v) in [
            ("eps", self.eps),
            ("nu", self.nu),
            ("tau", self.tau),
            ("rtol", self.integrator.rtol),
            ("atol", self.integrator.atol),
            ("w_x", self.seeds.w_x),
            ("k_a", self.seeds.k_a),
        ] {
            out.push_str(&format!("{k} = {}\n", toml::Value::Float(v)));
        }
        out.push_str(&format!("seeds = {}\n", self.seeds.count));
        out
    }

    /// Half-width of the seed rectangle along `a`.
    pub fn w_a(&self) -> f64 {
        self.seeds.k_a * self.eps.cbrt()
    }
}

/// Which part of the fan an exit belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FanClass {
    /// Along the positive `x`-axis, `x₅ > 1 − τ`.
    Lx,
    /// Interior of the fan.
    R,
    /// Along the positive `y`-axis, `x₅ < −1 + τ`.
    Ly,
}

impl FanClass {
    pub fn classify(x5: f64, tau: f64) -> Self {
        if x5 < -1.0 + tau {
            FanClass::Ly
        } else if x5 > 1.0 - tau {
            FanClass::Lx
        } else {
            FanClass::R
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FanClass::Lx => "Lx",
            FanClass::R => "R",
            FanClass::Ly => "Ly",
        }
    }
}

/// State on the exit section.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitRecord {
    pub seed_id: usize,
    pub exit_state: StateZ,
    pub x5: f64,
    pub fan_class: FanClass,
    pub flight_time: f64,
}

/// Seeds on the entry section.
#[derive(Clone, Debug, PartialEq)]
pub struct EntrySeeds {
    /// Where σ crosses `{y = −ν}`.
    pub p: SlowState,
    /// Offsets `(Δx, Δa)` from `p`, in seed order.
    pub offsets: Vec<[f64; 2]>,
    pub seeds: Vec<StateZ>,
}

fn linspace_unit(n: usize) -> Vec<f64> {
    if n == 1 {
        vec![0.0]
    } else {
        (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
    }
}

/// Intersection of σ with the entry section for this configuration.
pub fn entry_point(cfg: &RunConfig) -> Result<SlowState, ExperimentError> {
    let sigma = sigma_trajectory(&cfg.sys, cfg.nu, SIGMA_DELTA0, &IntegratorConfig::default())?;
    Ok(sigma.p)
}

pub fn seed_at(cfg: &RunConfig, p: &SlowState, off: [f64; 2]) -> StateZ {
    psi(p.x + off[0], -cfg.nu, p.a + off[1]).with_eps(cfg.eps)
}

/// Seeds `Ψ(p + offset)` on a grid over the rectangle
/// `|Δx| ≤ w_x`, `|Δa| ≤ k_a ε^{1/3}` around σ's entry point.
pub fn entry_seeds(cfg: &RunConfig) -> Result<EntrySeeds, ExperimentError> {
    cfg.validate()?;
    let p = entry_point(cfg)?;
    let n = cfg.seeds.count;
    let nx = ((n as f64).sqrt().round() as usize).max(1);
    let na = n.div_ceil(nx);
    let (ux, ua) = (linspace_unit(nx), linspace_unit(na));
    let w_a = cfg.w_a();
    let mut offsets = Vec::with_capacity(n);
    'outer: for &u in &ux {
        for &v in &ua {
            if offsets.len() == n {
                break 'outer;
            }
            offsets.push([u * cfg.seeds.w_x, v * w_a]);
        }
    }
    let mut seeds = Vec::with_capacity(n);
    for (index, off) in offsets.iter().enumerate() {
        let (x, a) = (p.x + off[0], p.a + off[1]);
        if stratify(x, -cfg.nu, a, STRATIFY_TOL) != StratumLabel::RegularAttracting {
            return Err(ExperimentError::SeedNotAttracting { index, x, a });
        }
        seeds.push(seed_at(cfg, &p, *off));
    }
    Ok(EntrySeeds { p, offsets, seeds })
}

fn run_transition(cfg: &RunConfig, seed: &StateZ, record: bool) -> Result<EventHit<5>, ExperimentError> {
    let mut icfg = cfg.integrator;
    icfg.record = record;
    let eps = cfg.eps;
    let horizon = (100.0 / eps).max(1e3);
    let two_nu = 2.0 * cfg.nu;
    integrate_to_event(
        |_, s: &[f64; 5]| cfg.sys.fast_field5(s, eps),
        &seed.phase(),
        (0.0, horizon),
        |_, s| s[0] + s[1] - two_nu,
        Direction::Rising,
        &icfg,
    )
    .map_err(|e| match e {
        OdeError::NoEvent { t, reason, last } => ExperimentError::NoEvent {
            t,
            reason,
            last: StateZ::from_phase(&[last[0], last[1], last[2], last[3], last[4]], eps),
        },
        other => ExperimentError::Ode(other),
    })
}

fn exit_record(cfg: &RunConfig, seed_id: usize, hit: &EventHit<5>) -> ExitRecord {
    let s = StateZ::from_phase(&hit.state, cfg.eps);
    let x5 = (s.x - s.y) / (s.x + s.y);
    ExitRecord {
        seed_id,
        exit_state: s,
        x5,
        fan_class: FanClass::classify(x5, cfg.tau),
        flight_time: hit.t,
    }
}

/// Integrates one seed to the exit section `{x + y = 2ν}`.
pub fn transition_map(cfg: &RunConfig, seed_id: usize, seed: &StateZ) -> Result<ExitRecord, ExperimentError> {
    let hit = run_transition(cfg, seed, false)?;
    Ok(exit_record(cfg, seed_id, &hit))
}

/// Like [`transition_map`] but keeps every accepted step.
pub fn transition_trajectory(
    cfg: &RunConfig,
    seed_id: usize,
    seed: &StateZ,
) -> Result<(ExitRecord, Trajectory<5>), ExperimentError> {
    let hit = run_transition(cfg, seed, true)?;
    Ok((exit_record(cfg, seed_id, &hit), hit.trajectory))
}

/// Result of aiming at the interior of the fan by bisection.
#[derive(Clone, Debug, PartialEq)]
pub struct AimResult {
    /// Seed indices of the straddling pair `(Lx side, Ly side)`.
    pub endpoints: (usize, usize),
    /// Segment parameter and `x₅` of every bisection evaluation.
    pub trace: Vec<(f64, f64)>,
    /// Best (smallest `|x₅|`) exit found.
    pub best: ExitRecord,
    pub found: bool,
}

impl AimResult {
    pub fn steps(&self) -> usize {
        self.trace.len()
    }
}

/// Output of [`fanout_experiment`].
#[derive(Clone, Debug)]
pub struct FanoutResult {
    pub seeds: EntrySeeds,
    pub records: Vec<ExitRecord>,
    /// Seeds that did not reach the exit section.
    pub failures: Vec<(usize, String)>,
    pub aim: AimResult,
}

impl FanoutResult {
    /// Counts per class in the order `Lx, R, Ly`, bisection exits included.
    pub fn histogram(&self) -> [usize; 3] {
        let mut h = [0; 3];
        let all = self.records.iter().chain(std::iter::once(&self.aim.best));
        for r in all {
            h[r.fan_class as usize] += 1;
        }
        h
    }
}

/// Bisects along the offset segment between an `Lx` exit and an `Ly` exit
/// until `|x₅| ≤ 0.5` or the step budget is used up.
pub fn aim_interior(cfg: &RunConfig, seeds: &EntrySeeds, records: &[ExitRecord]) -> Result<AimResult, ExperimentError> {
    // Closest straddling pair in normalized offset coordinates.
    let scale = [cfg.seeds.w_x.max(f64::MIN_POSITIVE), cfg.w_a().max(f64::MIN_POSITIVE)];
    let dist = |i: usize, j: usize| {
        let (a, b) = (seeds.offsets[i], seeds.offsets[j]);
        ((a[0] - b[0]) / scale[0]).hypot((a[1] - b[1]) / scale[1])
    };
    let mut best_pair: Option<(f64, usize, usize)> = None;
    for lx in records.iter().filter(|r| r.x5 > 0.0 && r.fan_class == FanClass::Lx) {
        for ly in records.iter().filter(|r| r.x5 < 0.0 && r.fan_class == FanClass::Ly) {
            let d = dist(lx.seed_id, ly.seed_id);
            if best_pair.is_none_or(|(bd, _, _)| d < bd) {
                best_pair = Some((d, lx.seed_id, ly.seed_id));
            }
        }
    }
    let (_, i_pos, i_neg) = best_pair.ok_or(ExperimentError::NoStraddle)?;
    let (o_pos, o_neg) = (seeds.offsets[i_pos], seeds.offsets[i_neg]);
    let at = |l: f64| {
        [
            o_pos[0] + l * (o_neg[0] - o_pos[0]),
            o_pos[1] + l * (o_neg[1] - o_pos[1]),
        ]
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut trace = Vec::new();
    let mut best = records.iter().find(|r| r.seed_id == i_pos).copied().unwrap();
    let id = seeds.seeds.len();
    let mut found = false;
    for _ in 0..AIM_MAX_STEPS {
        let mid = 0.5 * (lo + hi);
        let rec = transition_map(cfg, id, &seed_at(cfg, &seeds.p, at(mid)))?;
        trace.push((mid, rec.x5));
        if rec.x5.abs() < best.x5.abs() {
            best = rec;
        }
        if rec.x5.abs() <= AIM_TARGET {
            found = true;
            break;
        }
        if rec.x5 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(AimResult {
        endpoints: (i_pos, i_neg),
        trace,
        best,
        found,
    })
}

/// Runs every entry seed through the passage and aims at the fan interior.
pub fn fanout_experiment(cfg: &RunConfig) -> Result<FanoutResult, ExperimentError> {
    let seeds = entry_seeds(cfg)?;
    let results: Vec<Result<ExitRecord, ExperimentError>> = seeds
        .seeds
        .par_iter()
        .enumerate()
        .map(|(i, s)| transition_map(cfg, i, s))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    let aim = aim_interior(cfg, &seeds, &records)?;
    Ok(FanoutResult {
        seeds,
        records,
        failures,
        aim,
    })
}

/// Power-law fit of the exit parameters against `ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingFit {
    pub eps: Vec<f64>,
    /// `(a, b, c)` at the exit section for each `ε`.
    pub exits: Vec<[f64; 3]>,
    /// Fitted exponents `(p_a, p_b, p_c)` of `|·| ∝ ε^p`.
    pub exponents: [f64; 3],
    /// RMS residual of each log-log fit.
    pub residuals: [f64; 3],
}

/// Least-squares slope and RMS residual of `ys` against `xs`.
fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    (slope, (rss / n).sqrt())
}

/// Sweeps `ε` over `eps_grid` with the seed `Ψ(p + (0, a_offset·ε^{1/3}))` and
/// fits exponents to `|a|, |b|, |c|` at the exit.
pub fn scaling_sweep(base: &RunConfig, eps_grid: &[f64], a_offset: f64) -> Result<ScalingFit, ExperimentError> {
    if eps_grid.len() < 5 || !eps_grid.iter().all(|&e| e > 0.0) {
        return Err(ExperimentError::InvalidConfig(
            "the eps grid needs at least five positive values".into(),
        ));
    }
    base.validate()?;
    let p = entry_point(base)?;
    let exits = eps_grid
        .par_iter()
        .map(|&eps| {
            let mut cfg = base.clone();
            cfg.eps = eps;
            let seed = seed_at(&cfg, &p, [0.0, a_offset * eps.cbrt()]);
            transition_map(&cfg, 0, &seed).map(|r| [r.exit_state.a, r.exit_state.b, r.exit_state.c])
        })
        .collect::<Result<Vec<_>, _>>()?;
    let names = ["a", "b", "c"];
    for (e, ex) in eps_grid.iter().zip(&exits) {
        for k in 0..3 {
            if ex[k].abs() < FIT_FLOOR {
                return Err(ExperimentError::DegenerateFit {
                    component: names[k],
                    eps: *e,
                    value: ex[k],
                });
            }
        }
    }
    let xs: Vec<f64> = eps_grid.iter().map(|e| e.ln()).collect();
    let mut exponents = [0.0; 3];
    let mut residuals = [0.0; 3];
    for k in 0..3 {
        let ys: Vec<f64> = exits.iter().map(|e| e[k].abs().ln()).collect();
        (exponents[k], residuals[k]) = fit_line(&xs, &ys);
    }
    Ok(ScalingFit {
        eps: eps_grid.to_vec(),
        exits,
        exponents,
        residuals,
    })
}

/// `n` logarithmically spaced values from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n.max(2) - 1) as f64).exp())
        .collect()
}

/// Settings for the experiment with the rotated unfolding
/// `x' = 2xy − ax + (b − c)/2`, `y' = x² + y² + ay + (b + c)/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct AltConfig {
    pub eps: f64,
    /// Constant drift `(g_a, g_b, g_c)`.
    pub g: [f64; 3],
    /// Centre `(x, y, a, b, c)` of the seed cloud.
    pub center: [f64; 5],
    /// Half-widths of the seed cloud.
    pub spread: [f64; 5],
    pub seeds: usize,
    pub rng_seed: u64,
    /// Radius of the circle where exits are measured.
    pub nu: f64,
    pub t_max: f64,
    /// Angular separation above which two exits count as distinct directions.
    pub direction_tol: f64,
    pub integrator: IntegratorConfig,
}

impl Default for AltConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            g: [-1.0, 1.0, 2.0],
            center: [-1.5, -2.0, 1.0, -2.0, -1.0],
            spread: [0.05, 0.05, 0.01, 0.01, 0.01],
            seeds: 10,
            rng_seed: 7,
            nu: 0.25,
            t_max: 1e4,
            direction_tol: 2f64.to_radians(),
            integrator: IntegratorConfig::default(),
        }
    }
}

/// One trajectory of the rotated-unfolding experiment.
#[derive(Clone, Debug)]
pub struct AltRun {
    pub seed: [f64; 5],
    /// Closest approach to the origin of the fast plane.
    pub min_radius: f64,
    /// Polar angle where the trajectory leaves the radius-ν disk after
    /// having entered it; `None` if it never entered or never left.
    pub exit_angle: Option<f64>,
    pub trajectory: Trajectory<5>,
}

#[derive(Clone, Debug)]
pub struct AltResult {
    pub runs: Vec<AltRun>,
    pub distinct_directions: usize,
    pub fan_out: bool,
}

/// Velocity of the rotated unfolding with drift.
pub fn alt_field(cfg: &AltConfig, s: &[f64; 5]) -> [f64; 5] {
    let [x, y, a, b, c] = *s;
    [
        2.0 * x * y - a * x + 0.5 * (b - c),
        x * x + y * y + a * y + 0.5 * (b + c),
        cfg.eps * cfg.g[0],
        cfg.eps * cfg.g[1],
        cfg.eps * cfg.g[2],
    ]
}

fn alt_run(cfg: &AltConfig, seed: [f64; 5]) -> Result<AltRun, ExperimentError> {
    let field = |_: f64, s: &[f64; 5]| alt_field(cfg, s);
    let radius = |s: &[f64; 5]| s[0].hypot(s[1]);
    let nu = cfg.nu;
    let enter = integrate_to_event(
        field,
        &seed,
        (0.0, cfg.t_max),
        |_, s| radius(s) - nu,
        Direction::Falling,
        &cfg.integrator,
    );
    let mut trajectory;
    let mut exit_angle = None;
    match enter {
        Ok(hit) => {
            trajectory = hit.trajectory;
            let leave = integrate_to_event(
                field,
                &hit.state,
                (hit.t, cfg.t_max.max(hit.t + 1.0)),
                |_, s| radius(s) - nu,
                Direction::Rising,
                &cfg.integrator,
            );
            // Skip the entry point itself, which the second search reports
            // as an immediate crossing.
            let leave = match leave {
                Ok(h) if h.t == hit.t => {
                    let nudged = h.trajectory.states.last().copied().unwrap_or(hit.state);
                    let step = field(0.0, &nudged);
                    let mut inside = nudged;
                    for k in 0..5 {
                        inside[k] += 1e-9 * step[k];
                    }
                    integrate_to_event(
                        field,
                        &inside,
                        (hit.t, cfg.t_max.max(hit.t + 1.0)),
                        |_, s| radius(s) - nu,
                        Direction::Rising,
                        &cfg.integrator,
                    )
                }
                other => other,
            };
            match leave {
                Ok(h) => {
                    exit_angle = Some(h.state[1].atan2(h.state[0]));
                    trajectory.times.extend(h.trajectory.times.iter().skip(1));
                    trajectory.states.extend(h.trajectory.states.iter().skip(1));
                    trajectory.terminal_reason = TerminalReason::EventHit;
                }
                Err(OdeError::NoEvent { .. }) => {}
                Err(e) => return Err(ExperimentError::Ode(e)),
            }
        }
        Err(OdeError::NoEvent { .. }) => {
            let mut c = cfg.integrator;
            c.record = true;
            trajectory = crate::ode::integrate(field, &seed, (0.0, cfg.t_max), &c).map_err(ExperimentError::Ode)?;
        }
        Err(e) => return Err(ExperimentError::Ode(e)),
    }
    let min_radius = trajectory.states.iter().map(radius).fold(f64::INFINITY, f64::min);
    Ok(AltRun {
        seed,
        min_radius,
        exit_angle,
        trajectory,
    })
}

/// Number of clusters of angles whose neighbours differ by more than `tol`.
pub fn count_directions(angles: &[f64], tol: f64) -> usize {
    let mut a: Vec<f64> = angles.to_vec();
    a.sort_by(f64::total_cmp);
    if a.is_empty() {
        return 0;
    }
    let mut n = 1;
    for w in a.windows(2) {
        if w[1] - w[0] > tol {
            n += 1;
        }
    }
    // Clusters straddling ±π are one direction.
    if n > 1 && a[0] + 2.0 * std::f64::consts::PI - a[a.len() - 1] <= tol {
        n -= 1;
    }
    n
}

/// Integrates a seed cloud in the rotated unfolding and measures where the
/// trajectories leave a small disk around the umbilic point.
pub fn alt_unfolding_experiment(cfg: &AltConfig) -> Result<AltResult, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let seeds: Vec<[f64; 5]> = (0..cfg.seeds)
        .map(|_| std::array::from_fn(|k| cfg.center[k] + cfg.spread[k] * rng.gen_range(-1.0..=1.0)))
        .collect();
    let runs = seeds
        .par_iter()
        .map(|s| alt_run(cfg, *s))
        .collect::<Result<Vec<_>, _>>()?;
    let angles: Vec<f64> = runs.iter().filter_map(|r| r.exit_angle).collect();
    let distinct_directions = count_directions(&angles, cfg.direction_tol);
    Ok(AltResult {
        runs,
        distinct_directions,
        fan_out: distinct_directions >= 3,
    })
}

/// Formats a number with 17 significant digits, positional for decimal
/// exponents in `[−5, 17)` and scientific otherwise. The text parses back to
/// the same `f64`.
pub fn fmt17(x: f64) -> String {
    if !x.is_finite() || x == 0.0 {
        return format!("{x}");
    }
    let sci = format!("{x:.16e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-5..17).contains(&exp) {
        format!("{x:.*}", (16 - exp) as usize)
    } else {
        sci
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes `exits.csv` with header `seed_id,x,y,a,b,c,x5,class,flight_time`.
pub fn write_exits_csv(path: &Path, records: &[ExitRecord]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["seed_id", "x", "y", "a", "b", "c", "x5", "class", "flight_time"])
        .map_err(|e| io_err(path, e))?;
    for r in records {
        let s = &r.exit_state;
        w.write_record([
            r.seed_id.to_string(),
            fmt17(s.x),
            fmt17(s.y),
            fmt17(s.a),
            fmt17(s.b),
            fmt17(s.c),
            fmt17(r.x5),
            r.fan_class.name().to_string(),
            fmt17(r.flight_time),
        ])
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes a trajectory as `t,x,y,a,b,c`.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory<5>) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["t", "x", "y", "a", "b", "c"])
        .map_err(|e| io_err(path, e))?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let mut row = vec![fmt17(*t)];
        row.extend(s.iter().map(|v| fmt17(*v)));
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes a short plotting script next to the CSV output.
pub fn write_plot_script(dir: &Path) -> Result<(), ExperimentError> {
    let path = dir.join("plot_exits.py");
    let mut f = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let script = "import csv, glob\nimport matplotlib.pyplot as plt\n\n\
fig, ax = plt.subplots()\n\
for name in sorted(glob.glob('traj_*.csv')):\n\
    rows = list(csv.DictReader(open(name)))\n\
    ax.plot([float(r['x']) for r in rows], [float(r['y']) for r in rows], lw=0.6)\n\
ex = list(csv.DictReader(open('exits.csv')))\n\
ax.scatter([float(r['x']) for r in ex], [float(r['y']) for r in ex], s=6, c='k')\n\
ax.set_xlabel('x'); ax.set_ylabel('y')\n\
fig.savefig('exits.png', dpi=150)\n";
    f.write_all(script.as_bytes()).map_err(|e| io_err(&path, e))
}
