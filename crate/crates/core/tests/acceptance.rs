//! Acceptance suite. Each test checks one criterion at its stated tolerance
//! and prints a single `criterion N: PASS|FAIL ...` line.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use umbilic::airy::{
    airy, airy_first_zero, blowup_time, classify_gamma, dividing_solution, s_critical, ExitTarget, RiccatiBranch,
};
use umbilic::blowup::{
    blow_up, chart_lift, coordinate_change, exit_transition_x5, named_equilibria, pushforward_error, ChartAtlas,
    ChartId, ChartPoint, EquilibriumChart,
};
use umbilic::experiments::{entry_point, fanout_experiment, log_grid, scaling_sweep, seed_at, RunConfig};
use umbilic::fast::{
    classify_config, fast_vector_field, jump_outcomes, symmetry_reflect, symmetry_swap, Configuration, EquilibriumKind,
    FastParams, JumpConfig, JumpOutcome,
};
use umbilic::geometry::{germ_codimension, Germ, GERM_MAX_DEGREE};
use umbilic::ode::{integrate, integrate_to_event, Direction, IntegratorConfig, TerminalReason};
use umbilic::poly::{parse_poly, PolyExpr, Var, NVARS};
use umbilic::slow_flow::{
    desing_slow_flow, desing_slow_flow_adjugate, desing_slow_flow_polys, origin_spectrum, SlowState,
};
use umbilic::system::{eval_fast_field, FastSlowSystem, StateZ};

fn report(n: usize, ok: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn constant_drift() -> FastSlowSystem {
    FastSlowSystem::constant(-1.0, 2.0, 1.0)
}

fn tight() -> IntegratorConfig {
    IntegratorConfig::default().with_tolerances(1e-12, 1e-14)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

#[test]
fn criterion_01_fan_out() {
    let start = Instant::now();
    let mut cfg = RunConfig::new(constant_drift(), 1e-3);
    cfg.seeds.count = 4096;
    let res = fanout_experiment(&cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let x5: Vec<f64> = res.records.iter().map(|r| r.x5).collect();
    let low = x5.iter().filter(|v| (-1.0..=-0.9).contains(*v)).count();
    let high = x5.iter().filter(|v| (0.9..=1.0).contains(*v)).count();
    let aim = Some(res.aim.best.x5);
    let aim_ok = res.aim.found && res.aim.steps() <= 60 && aim.is_some_and(|v| v.abs() <= 0.5);
    let ok = low > 0 && high > 0 && aim_ok && elapsed < 60.0 && res.failures.is_empty();
    report(
        1,
        ok,
        format!(
            "exits={} in[-1,-0.9]={low} in[0.9,1]={high} aim_x5={aim:?} aim_steps={} failures={} time={elapsed:.1}s",
            res.records.len(),
            res.aim.steps(),
            res.failures.len()
        ),
    );
}

#[test]
fn criterion_02_scaling_exponents() {
    let start = Instant::now();
    let cfg = RunConfig::new(constant_drift(), 1e-3);
    let fit = scaling_sweep(&cfg, &log_grid(1e-6, 1e-3, 7), 0.0).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let [pa, pb, pc] = fit.exponents;
    let ok = (pa - 1.0 / 3.0).abs() <= 0.05
        && (pb - 2.0 / 3.0).abs() <= 0.05
        && (pc - 2.0 / 3.0).abs() <= 0.05
        && elapsed < 300.0;
    report(
        2,
        ok,
        format!(
            "p_a={pa:.4} p_b={pb:.4} p_c={pc:.4} residuals={:.3?} time={elapsed:.1}s",
            fit.residuals
        ),
    );
}

#[test]
fn criterion_03_factored_scaling() {
    let sys = FastSlowSystem::from_strs("factored", "-a", "2", "1", "0", "0").unwrap();
    let cfg = RunConfig::new(sys, 1e-3);
    let fit = scaling_sweep(&cfg, &log_grid(1e-6, 1e-3, 7), 0.1).unwrap();
    let pa = fit.exponents[0];
    report(
        3,
        (pa - 1.0 / 3.0).abs() <= 0.05,
        format!("p_a={pa:.4} residual={:.3}", fit.residuals[0]),
    );
}

/// Plain f64 Maclaurin series of `Ai`, valid for moderate `|z|`.
fn ai_series(z: f64) -> f64 {
    const C1: f64 = 0.355_028_053_887_817_24;
    const C2: f64 = 0.258_819_403_792_806_8;
    let z3 = z * z * z;
    let (mut f, mut g) = (1.0, z);
    let (mut tf, mut tg) = (1.0, z);
    for k in 0..60 {
        let k = k as f64;
        tf *= z3 / ((3.0 * k + 2.0) * (3.0 * k + 3.0));
        tg *= z3 / ((3.0 * k + 3.0) * (3.0 * k + 4.0));
        f += tf;
        g += tg;
    }
    C1 * f - C2 * g
}

/// First zero of `Ai` found by scanning downward from 0 and bisecting.
fn ai_zero_by_scan() -> f64 {
    let mut z = 0.0;
    while ai_series(z - 0.01) > 0.0 {
        z -= 0.01;
    }
    let (mut lo, mut hi) = (z - 0.01, z);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ai_series(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn bisect_flip(lo: f64, hi: f64, x_first: impl Fn(f64) -> bool) -> f64 {
    let (mut lo, mut hi) = (lo, hi);
    assert!(x_first(lo) && !x_first(hi));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if x_first(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_04_s0_threshold() {
    let z0 = ai_zero_by_scan();
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for (b0, c0) in [(1.0, 1.0), (2.0, 1.0), (1.0, 3.0)] {
        let formula = s_critical(b0, c0);
        let flip = bisect_flip(formula - 1.0, formula + 1.0, |s| {
            classify_gamma(b0, c0, s).unwrap() == ExitTarget::Q6
        });
        // Independent route: blow-up times from the scanned zero, x first if earlier.
        let tx = -z0 / f64::cbrt(b0);
        let independent = bisect_flip(formula - 1.0, formula + 1.0, |s| tx < -z0 / f64::cbrt(c0) - s);
        worst = worst.max((flip - formula).abs()).max((independent - formula).abs());
        detail += &format!("({b0},{c0}): flip={flip:.12} formula={formula:.12} independent={independent:.12} ");
    }
    let s21 = s_critical(2.0, 1.0);
    let ok = worst <= 1e-9 && (s21 - 0.4823506).abs() < 1e-5;
    report(4, ok, format!("{detail}max_dev={worst:.2e} s0(2,1)={s21:.9}"));
}

fn random_chart_point(rng: &mut ChaCha8Rng, chart: ChartId) -> ChartPoint {
    let mut c: [f64; NVARS] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    c[chart.radial_slot()] = rng.gen_range(1e-3..1.0);
    ChartPoint::new(chart, c)
}

#[test]
fn criterion_05_pushforward_and_conservation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let systems = [
        constant_drift(),
        FastSlowSystem::from_strs("poly", "-1 + c", "2 + a*x", "1 - y", "x*y", "b").unwrap(),
    ];
    let mut push: f64 = 0.0;
    for sys in &systems {
        let atlas = ChartAtlas::new(sys).unwrap();
        for chart in ChartId::ALL {
            for _ in 0..1000 {
                push = push.max(pushforward_error(&atlas, &random_chart_point(&mut rng, chart)));
            }
        }
    }

    let sys = constant_drift();
    let atlas = ChartAtlas::new(&sys).unwrap();
    let (b0, c0) = (sys.b0(), sys.c0());
    let mut drift_y: f64 = 0.0;
    let mut drift_eps: f64 = 0.0;
    // Unit-time trajectories that stay bounded; starts that blow up are redrawn.
    let (mut kept_y, mut kept_eps) = (0, 0);
    for _ in 0..400 {
        if kept_y == 20 && kept_eps == 20 {
            break;
        }
        let p = [
            rng.gen_range(-1.0..0.0),
            rng.gen_range(0.05..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(0.01..0.5),
        ];
        let f = atlas.field(ChartId::MinusY);
        let tr = integrate(|_, s| f.eval(s), &p, (0.0, 1.0), &tight()).unwrap();
        if kept_y < 20 && tr.terminal_reason == TerminalReason::TimeEnd {
            kept_y += 1;
            let q0 = p[1].powi(3) * p[5];
            for s in &tr.states {
                drift_y = drift_y.max((s[1].powi(3) * s[5] - q0).abs() / q0);
            }
        }

        let e = [
            rng.gen_range(-2.0..-0.5),
            rng.gen_range(-2.0..-0.5),
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-1.0..0.0),
            rng.gen_range(-1.0..0.0),
            0.0,
        ];
        let f = atlas.field(ChartId::Eps);
        let tr = integrate(|_, s| f.eval(s), &e, (0.0, 1.0), &tight()).unwrap();
        if kept_eps < 20 && tr.terminal_reason == TerminalReason::TimeEnd {
            kept_eps += 1;
            let k0 = c0 * e[3] - b0 * e[4];
            for s in &tr.states {
                drift_eps = drift_eps.max((c0 * s[3] - b0 * s[4] - k0).abs());
            }
        }
    }
    let ok = push <= 1e-9 && drift_y <= 1e-8 && drift_eps <= 1e-8 && kept_y == 20 && kept_eps == 20;
    report(
        5,
        ok,
        format!(
            "pushforward_max={push:.2e} r1^3*eps1_drift={drift_y:.2e} ({kept_y} runs) \
             C0b2-B0c2_drift={drift_eps:.2e} ({kept_eps} runs)"
        ),
    );
}

/// Chart field extended by the original time, `dt/dτ = 1/r`.
fn timed_chart_field(atlas: &ChartAtlas, chart: ChartId) -> impl Fn(f64, &[f64; 7]) -> [f64; 7] + '_ {
    let f = atlas.field(chart);
    let slot = chart.radial_slot();
    move |_, s| {
        let p: [f64; NVARS] = std::array::from_fn(|i| s[i]);
        let v = f.eval(&p);
        std::array::from_fn(|i| if i < NVARS { v[i] } else { 1.0 / s[slot] })
    }
}

fn original_at(sys: &FastSlowSystem, z0: &StateZ, t: f64) -> [f64; NVARS] {
    let tr = integrate(
        |_, s: &[f64; NVARS]| eval_fast_field(sys, &StateZ::from_array(s), s[5]),
        &z0.to_array(),
        (0.0, t),
        &tight().without_recording(),
    )
    .unwrap();
    *tr.last_state()
}

fn extend(p: &ChartPoint, t: f64) -> [f64; 7] {
    std::array::from_fn(|i| if i < NVARS { p.coords[i] } else { t })
}

#[test]
fn criterion_06_chart_coherence() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut round: f64 = 0.0;
    for _ in 0..1000 {
        let y = -rng.gen_range(0.05..1.0);
        let x = -y + rng.gen_range(0.05..1.0);
        let a = rng.gen_range(0.05..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let z =
            StateZ::new(x, y, a, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).with_eps(rng.gen_range(1e-4..0.5));
        let side = if a > 0.0 { ChartId::PlusA } else { ChartId::MinusA };
        let charts = [ChartId::MinusY, ChartId::Eps, side, ChartId::Exit];
        for from in charts {
            for to in charts.into_iter().filter(|c| *c != from) {
                let p = chart_lift(from, &z).unwrap();
                let back = coordinate_change(&coordinate_change(&p, to).unwrap(), from).unwrap();
                for i in 0..NVARS {
                    round = round.max(rel(back.coords[i], p.coords[i]));
                }
            }
        }
    }

    // MinusY until eps1 = 0.5, then Eps, both blown down and compared with
    // the original-coordinate trajectory at the same original time.
    let sys = constant_drift();
    let atlas = ChartAtlas::new(&sys).unwrap();
    let cfg = RunConfig::new(sys.clone(), 1e-3);
    let z0 = seed_at(&cfg, &entry_point(&cfg).unwrap(), [0.0, 0.0]);
    let p0 = chart_lift(ChartId::MinusY, &z0).unwrap();
    let hit = integrate_to_event(
        timed_chart_field(&atlas, ChartId::MinusY),
        &extend(&p0, 0.0),
        (0.0, 1e4),
        |_, s| s[5] - 0.5,
        Direction::Rising,
        &tight().without_recording(),
    )
    .unwrap();
    let mut cont: f64 = 0.0;
    let compare = |p: &ChartPoint, t: f64| {
        let z = blow_up(p).to_array();
        let o = original_at(&sys, &z0, t);
        (0..NVARS).map(|i| (z[i] - o[i]).abs()).fold(0.0, f64::max)
    };
    let end_y = ChartPoint::new(ChartId::MinusY, std::array::from_fn(|i| hit.state[i]));
    let t_switch = hit.state[6];
    cont = cont.max(compare(&end_y, t_switch));
    let start_eps = coordinate_change(&end_y, ChartId::Eps).unwrap();
    let jump = (0..NVARS)
        .map(|i| (blow_up(&start_eps).to_array()[i] - blow_up(&end_y).to_array()[i]).abs())
        .fold(0.0, f64::max);
    cont = cont.max(jump);
    let mut state = extend(&start_eps, t_switch);
    for _ in 0..6 {
        let tr = integrate(
            timed_chart_field(&atlas, ChartId::Eps),
            &state,
            (0.0, 0.5),
            &tight().without_recording(),
        )
        .unwrap();
        state = *tr.last_state();
        let p = ChartPoint::new(ChartId::Eps, std::array::from_fn(|i| state[i]));
        cont = cont.max(compare(&p, state[6]));
    }
    let ok = round <= 1e-12 && cont <= 1e-6;
    report(
        6,
        ok,
        format!(
            "round_trip_max={round:.2e} continuation_max={cont:.2e} t_switch={t_switch:.3} t_end={:.3}",
            state[6]
        ),
    );
}

fn sorted_real(ev: &[f64]) -> Vec<f64> {
    let mut v = ev.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

#[test]
fn criterion_07_slow_flow() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut adj: f64 = 0.0;
    for _ in 0..1000 {
        let sys = FastSlowSystem::constant(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(0.2..3.0),
            rng.gen_range(-3.0..3.0),
        );
        let s = SlowState::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        );
        let (f, g) = (desing_slow_flow(&sys, &s), desing_slow_flow_adjugate(&sys, &s));
        for i in 0..3 {
            adj = adj.max(rel(f[i], g[i]));
        }
    }

    let mut spectra: f64 = 0.0;
    for (b0, c0) in [(2.0, 1.0), (1.0, 3.0), (0.5, 0.5)] {
        let sys = FastSlowSystem::constant(-1.0, b0, c0);
        let k = 2.0 * f64::sqrt(b0 * c0);
        let polys = desing_slow_flow_polys(&sys);
        let vars = [Var::X, Var::Y, Var::A];
        let m = DMatrix::from_fn(3, 3, |i, j| polys[i].differentiate(vars[j]).eval(&[0.0; NVARS]));
        let ev = m.complex_eigenvalues();
        assert!(ev.iter().all(|z| z.im.abs() <= 1e-8));
        let got = sorted_real(&ev.iter().map(|z| z.re).collect::<Vec<_>>());
        let want = [-k, 0.0, k];
        let stated = origin_spectrum(&sys).unwrap();
        let stated = sorted_real(&stated.eigenvalues.iter().map(|z| z.re).collect::<Vec<_>>());
        for i in 0..3 {
            spectra = spectra.max((got[i] - want[i]).abs()).max((stated[i] - want[i]).abs());
        }

        let atlas = ChartAtlas::new(&sys).unwrap();
        let eqs = named_equilibria(&atlas).unwrap();
        let z2 = eqs.iter().find(|e| e.name == "ζ2").unwrap();
        assert!(matches!(z2.chart, EquilibriumChart::Slow(_)));
        assert!(z2.eigenvalues.iter().all(|z| z.im.abs() <= 1e-8));
        let got = sorted_real(&z2.eigenvalues.iter().map(|z| z.re).collect::<Vec<_>>());
        let want = [-k, k, 2.0 * k];
        for i in 0..3 {
            spectra = spectra.max((got[i] - want[i]).abs());
        }
    }

    let mut exit: f64 = 0.0;
    for xk in [-2.0, -0.8, 0.3, 0.5, 2.5] {
        for rho in [0.01f64, 0.1, 0.5, 1.0] {
            let time = (1.0 / rho).ln();
            // At rho = 1 the passage takes no time and the map is the identity.
            let integrated = if time == 0.0 {
                xk
            } else {
                let tr = integrate(
                    |_, u: &[f64; 1]| [u[0] * (1.0 - u[0] * u[0]) / (1.0 + u[0] * u[0])],
                    &[xk],
                    (0.0, time),
                    &IntegratorConfig::default()
                        .with_tolerances(1e-13, 1e-15)
                        .without_recording(),
                )
                .unwrap();
                tr.last_state()[0]
            };
            exit = exit.max((integrated - exit_transition_x5(xk, rho)).abs());
        }
    }
    let ok = adj <= 1e-12 && spectra <= 1e-8 && exit <= 1e-8;
    report(
        7,
        ok,
        format!("adjugate_max={adj:.2e} spectra_max={spectra:.2e} exit_transition_max={exit:.2e}"),
    );
}

#[test]
fn criterion_08_riccati_airy() {
    let mut residual: f64 = 0.0;
    let mut track: f64 = 0.0;
    for b0 in [1.0, 2.0] {
        let end = blowup_time(b0) - 0.2;
        let x = |t: f64| dividing_solution(b0, t, RiccatiBranch::Dividing).unwrap();
        let h = 2e-4;
        for i in 0..=400 {
            let t = -20.0 + (end + 20.0) * i as f64 / 400.0;
            let d = (x(t - 2.0 * h) - 8.0 * x(t - h) + 8.0 * x(t + h) - x(t + 2.0 * h)) / (12.0 * h);
            let rhs = x(t) * x(t) + b0 * t;
            residual = residual.max((d - rhs).abs() / (1.0 + rhs.abs()));
        }
        let tr = integrate(
            |t, u: &[f64; 1]| [u[0] * u[0] + b0 * t],
            &[x(-20.0)],
            (-20.0, end),
            &tight(),
        )
        .unwrap();
        for (t, u) in tr.times.iter().zip(&tr.states) {
            track = track.max((u[0] - x(*t)).abs());
        }
    }

    let mut wr: f64 = 0.0;
    for i in 0..=1500 {
        let z = -10.0 + 15.0 * i as f64 / 1500.0;
        wr = wr.max((airy(z).unwrap().wronskian() - std::f64::consts::FRAC_1_PI).abs());
    }

    let z0 = airy_first_zero();
    let oracle = ai_zero_by_scan();
    let ok = residual <= 1e-9
        && track <= 1e-6
        && wr <= 1e-10
        && (z0 - oracle).abs() <= 1e-8
        && (z0 - -2.3381074105).abs() <= 1e-8;
    report(
        8,
        ok,
        format!("ode_residual={residual:.2e} tracking={track:.2e} wronskian={wr:.2e} z0={z0:.12} oracle={oracle:.12}"),
    );
}

#[test]
fn criterion_09_germ_codimensions() {
    let cases: [(PolyExpr, usize); 5] = [
        (parse_poly("x^3").unwrap(), 1),
        (parse_poly("x^4").unwrap(), 2),
        (parse_poly("x^3 + y^3").unwrap(), 3),
        (
            PolyExpr::from_terms([([0, 3, 0, 0, 0, 0], 1.0 / 3.0), ([2, 1, 0, 0, 0, 0], 1.0)]),
            3,
        ),
        (parse_poly("x^2 + y^2").unwrap(), 0),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (f, want) in cases {
        let c = germ_codimension(&Germ::new(f.clone()).unwrap(), GERM_MAX_DEGREE).unwrap();
        ok &= c.codim as usize == want;
        detail += &format!("[{}]->{} ", f.display_with(&["x", "y", "a", "b", "c", "eps"]), c.codim);
    }
    report(9, ok, detail.trim_end().to_string());
}

/// Fold point of the layer problem at `(x, y = a²/4x)` and the unit normal of
/// the fold curve in the `(b, c)` plane.
fn fold(x: f64, a: f64) -> (FastParams, [f64; 2]) {
    let y = a * a / (4.0 * x);
    let n = [a, -2.0 * x];
    let len = n[0].hypot(n[1]);
    (
        FastParams::new(a, -x * x - a * y, -y * y - a * x),
        [n[0] / len, n[1] / len],
    )
}

#[test]
fn criterion_10_jumps() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let jc = JumpConfig::default();

    let mut lower_ok = 0;
    let mut lower_launches = 0;
    for _ in 0..20 {
        let (p, _) = fold(-rng.gen_range(0.2..1.5), rng.gen_range(-1.0..1.0));
        let launches = jump_outcomes(&p, &jc).unwrap();
        lower_launches += launches.len();
        if !launches.is_empty() && launches.iter().all(|l| matches!(l.outcome, JumpOutcome::Escape { .. })) {
            lower_ok += 1;
        }
    }

    let (mut upper, mut upper_ok, mut tries) = (0, 0, 0);
    while upper < 20 && tries < 10_000 {
        tries += 1;
        let (p, n) = fold(rng.gen_range(0.2..1.5), rng.gen_range(0.05..1.5));
        let side = |s: f64| classify_config(&FastParams::new(p.a, p.b + s * 1e-3 * n[0], p.c + s * 1e-3 * n[1]));
        let (Ok(l), Ok(r)) = (side(-1.0), side(1.0)) else {
            continue;
        };
        let pair = [l, r];
        if !(pair.contains(&Configuration::B) && pair.contains(&Configuration::D)) {
            continue;
        }
        upper += 1;
        let sink = jump_outcomes(&p, &jc).unwrap().iter().any(|l| {
            matches!(
                l.outcome,
                JumpOutcome::ToEquilibrium {
                    kind: EquilibriumKind::Sink,
                    ..
                }
            )
        });
        upper_ok += sink as usize;
    }

    let mut sym = true;
    for _ in 0..1000 {
        let p = FastParams::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
        );
        let s = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let v = fast_vector_field(&p, &s);
        sym &= symmetry_swap(&p, &s) == [v[1], v[0]] && symmetry_reflect(&p, &s) == v;
    }
    let ok = lower_ok == 20 && upper == 20 && upper_ok == 20 && sym;
    report(
        10,
        ok,
        format!(
            "lower_cone_all_escape={lower_ok}/20 (launches={lower_launches}) upper_BD_reach_sink={upper_ok}/{upper} symmetries_exact={sym}"
        ),
    );
}
