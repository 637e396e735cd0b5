//! Command-line front end.
//!
//! Every subcommand prints its numeric results with 17 significant digits.
//! Files go to the `--out` directory only. Domain errors end with exit
//! code 1 and a single `error kind=<kind> message="<text>"` line on stderr.
//! Usage errors end with exit code 2.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::airy::{airy, classify_gamma, gamma_family, s_critical, AiryError};
use crate::blowup::{pushforward_error, BlowupError, ChartAtlas, ChartId, ChartPoint};
use crate::experiments::{
    alt_unfolding_experiment, entry_seeds, fanout_experiment, fmt17, log_grid, scaling_sweep, transition_trajectory,
    write_exits_csv, write_plot_script, write_trajectory_csv, AltConfig, ExperimentError, RunConfig,
};
use crate::fast::{
    classify_config, fast_equilibria, jump_outcomes, FastError, FastParams, JumpConfig, JumpOutcome, A_ZERO_TOL,
};
use crate::geometry::{germ_codimension, stratify, GeometryError, Germ, GERM_MAX_DEGREE, STRATIFY_TOL};
use crate::ode::Trajectory;
use crate::poly::{parse_poly, ParseError};
use crate::slow_flow::{sigma_trajectory, SlowFlowError, SIGMA_DELTA0};
use crate::system::{read_config_text, ConfigError, FastSlowSystem};

/// Environment variable holding the log level.
pub const LOG_ENV: &str = "UMBILIC_LOG";

#[derive(Debug, Parser)]
#[command(name = "umbilic", version, about = "Fast-slow dynamics near a hyperbolic umbilic")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Run specification with `[system]` and `[run]` sections.
    #[arg(long, global = true, value_parser = existing_file)]
    pub config: Option<PathBuf>,
    /// Output directory for every file written.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    #[arg(long, global = true)]
    pub nu: Option<f64>,
    #[arg(long, global = true)]
    pub seeds: Option<usize>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub rtol: Option<f64>,
    #[arg(long, global = true)]
    pub atol: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate every entry seed and write its trajectory.
    Simulate {
        /// Print the effective configuration instead of running.
        #[arg(long)]
        dump_config: bool,
    },
    /// Fan-out experiment: exit classes and interior aiming.
    Fanout,
    /// Fit power laws of the exit parameters against ε.
    Sweep {
        #[arg(long, default_value_t = 1e-6)]
        eps_min: f64,
        #[arg(long, default_value_t = 1e-3)]
        eps_max: f64,
        #[arg(long, default_value_t = 7)]
        points: usize,
        /// Seed offset in `a`, in units of `ε^{1/3}`.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        a_offset: f64,
    },
    /// Slow trajectory reaching the umbilic point from the attracting sheet.
    Sigma,
    /// Stratum of the critical-manifold point `Ψ(x, y, a)`.
    Strata {
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
        #[arg(long, allow_negative_numbers = true)]
        y: f64,
        #[arg(long, allow_negative_numbers = true)]
        a: f64,
    },
    /// Codimension of a germ in `x, y`.
    Germ {
        #[arg(long)]
        poly: String,
    },
    /// Equilibria and configuration of the layer problem.
    ClassifyFast(FastArgs),
    /// Fates of trajectories launched at a degenerate equilibrium.
    Jumps(FastArgs),
    /// Pushforward identity at random points of every chart.
    ChartsCheck {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        rng_seed: u64,
    },
    /// Member of the Riccati family on the blow-up sphere.
    Dividing {
        #[arg(long = "B0")]
        b0: f64,
        #[arg(long = "C0")]
        c0: f64,
        #[arg(long, allow_negative_numbers = true)]
        s: f64,
        #[arg(long, allow_negative_numbers = true)]
        t: f64,
    },
    /// Airy functions at `z`.
    Airy {
        #[arg(long, allow_negative_numbers = true)]
        z: f64,
    },
    /// Passage through the umbilic point of the rotated unfolding.
    AltUnfolding {
        /// Seed centre `x,y,a,b,c`.
        #[arg(long, value_delimiter = ',', num_args = 5, allow_negative_numbers = true)]
        center: Option<Vec<f64>>,
        /// Drift `g_a,g_b,g_c`.
        #[arg(long, value_delimiter = ',', num_args = 3, allow_negative_numbers = true)]
        drift: Option<Vec<f64>>,
        #[arg(long, default_value_t = 7)]
        rng_seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct FastArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub a: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub b: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub c: f64,
}

fn existing_file(s: &str) -> Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if p.is_file() {
        Ok(p)
    } else {
        Err(format!("no such file: {s}"))
    }
}

/// Failures of a subcommand after argument parsing.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0} requires --config")]
    MissingConfig(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    SlowFlow(#[from] SlowFlowError),
    #[error(transparent)]
    Fast(#[from] FastError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Blowup(#[from] BlowupError),
    #[error(transparent)]
    Airy(#[from] AiryError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::MissingConfig(_) => "missing_config",
            CliError::Config(_) => "config",
            CliError::Experiment(ExperimentError::NoEvent { .. }) => "no_event",
            CliError::Experiment(ExperimentError::NoStraddle) => "no_straddle",
            CliError::Experiment(ExperimentError::DegenerateFit { .. }) => "degenerate_fit",
            CliError::Experiment(_) => "experiment",
            CliError::SlowFlow(_) => "slow_flow",
            CliError::Fast(_) => "fast",
            CliError::Geometry(_) => "germ",
            CliError::Blowup(_) => "blowup",
            CliError::Airy(_) => "airy",
            CliError::Parse(_) => "parse",
            CliError::Invalid(_) => "invalid_argument",
            CliError::Io(_) => "io",
        }
    }
}

fn io(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

/// Parses `argv` (program name first) and runs the subcommand.
/// Returns the process exit code.
pub fn dispatch<I, T>(argv: I, out: &mut (dyn Write + Send), err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 2 {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.global.jobs {
        Some(0) => Err(CliError::Invalid("--jobs must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(&cli, out)),
            Err(e) => Err(io(e)),
        },
        None => run(&cli, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ").replace('"', "'");
            let _ = writeln!(err, "error kind={} message=\"{}\"", e.kind(), msg);
            1
        }
    }
}

/// Initializes logging from [`LOG_ENV`] (default `error`).
pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "error")).try_init();
}

fn default_system() -> FastSlowSystem {
    FastSlowSystem::constant(-1.0, 2.0, 1.0)
}

fn load_run_config(g: &GlobalOpts, cmd: &'static str) -> Result<RunConfig, CliError> {
    let path = g.config.as_ref().ok_or(CliError::MissingConfig(cmd))?;
    let text = read_config_text(path)?;
    let mut cfg = RunConfig::from_toml(&text)?;
    if let Some(e) = g.eps {
        cfg.eps = e;
    }
    if let Some(n) = g.nu {
        cfg.nu = n;
    }
    if let Some(n) = g.seeds {
        cfg.seeds.count = n;
    }
    if let Some(r) = g.rtol {
        cfg.integrator.rtol = r;
    }
    if let Some(a) = g.atol {
        cfg.integrator.atol = a;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_system(g: &GlobalOpts) -> Result<FastSlowSystem, CliError> {
    match &g.config {
        Some(path) => Ok(crate::system::parse_system(&read_config_text(path)?)?),
        None => Ok(default_system()),
    }
}

fn out_dir(g: &GlobalOpts) -> Result<&Path, CliError> {
    std::fs::create_dir_all(&g.out).map_err(io)?;
    Ok(&g.out)
}

fn write_xya_csv(path: &Path, traj: &Trajectory<3>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["t", "x", "y", "a"]).map_err(io)?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        w.write_record([fmt17(*t), fmt17(s[0]), fmt17(s[1]), fmt17(s[2])])
            .map_err(io)?;
    }
    w.flush().map_err(io)
}

fn run(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate { dump_config } => {
            let cfg = load_run_config(g, "simulate")?;
            if *dump_config {
                write!(out, "{}", cfg.to_toml()).map_err(io)?;
                return Ok(());
            }
            let dir = out_dir(g)?;
            let seeds = entry_seeds(&cfg)?;
            let mut records = Vec::new();
            for (i, s) in seeds.seeds.iter().enumerate() {
                let (rec, traj) = transition_trajectory(&cfg, i, s)?;
                write_trajectory_csv(&dir.join(format!("traj_{i}.csv")), &traj)?;
                records.push(rec);
            }
            write_exits_csv(&dir.join("exits.csv"), &records)?;
            write_plot_script(dir)?;
            for r in &records {
                writeln!(
                    out,
                    "seed {} x5 {} class {} flight_time {}",
                    r.seed_id,
                    fmt17(r.x5),
                    r.fan_class.name(),
                    fmt17(r.flight_time)
                )
                .map_err(io)?;
            }
        }
        Command::Fanout => {
            let cfg = load_run_config(g, "fanout")?;
            let dir = out_dir(g)?;
            let res = fanout_experiment(&cfg)?;
            let mut records = res.records.clone();
            records.push(res.aim.best);
            write_exits_csv(&dir.join("exits.csv"), &records)?;
            write_plot_script(dir)?;
            let h = res.histogram();
            writeln!(out, "histogram Lx {} R {} Ly {}", h[0], h[1], h[2]).map_err(io)?;
            for (i, msg) in &res.failures {
                writeln!(out, "failed seed {i}: {msg}").map_err(io)?;
            }
            writeln!(
                out,
                "aim found {} steps {} x5 {} seed_pair {} {}",
                res.aim.found,
                res.aim.steps(),
                fmt17(res.aim.best.x5),
                res.aim.endpoints.0,
                res.aim.endpoints.1
            )
            .map_err(io)?;
        }
        Command::Sweep {
            eps_min,
            eps_max,
            points,
            a_offset,
        } => {
            let cfg = load_run_config(g, "sweep")?;
            if !(*eps_min > 0.0 && eps_max > eps_min) {
                return Err(CliError::Invalid("need 0 < eps-min < eps-max".into()));
            }
            let dir = out_dir(g)?;
            let fit = scaling_sweep(&cfg, &log_grid(*eps_min, *eps_max, *points), *a_offset)?;
            let path = dir.join("sweep.csv");
            let mut w = csv::Writer::from_path(&path).map_err(io)?;
            w.write_record(["eps", "a", "b", "c"]).map_err(io)?;
            for (e, x) in fit.eps.iter().zip(&fit.exits) {
                w.write_record([fmt17(*e), fmt17(x[0]), fmt17(x[1]), fmt17(x[2])])
                    .map_err(io)?;
            }
            w.flush().map_err(io)?;
            for (k, name) in ["p_a", "p_b", "p_c"].iter().enumerate() {
                writeln!(
                    out,
                    "{name} {} rms {}",
                    fmt17(fit.exponents[k]),
                    fmt17(fit.residuals[k])
                )
                .map_err(io)?;
            }
        }
        Command::Sigma => {
            let sys = load_system(g)?;
            let nu = g.nu.unwrap_or(crate::slow_flow::SIGMA_NU);
            let mut icfg = crate::ode::IntegratorConfig::default();
            if let Some(r) = g.rtol {
                icfg.rtol = r;
            }
            if let Some(a) = g.atol {
                icfg.atol = a;
            }
            let sigma = sigma_trajectory(&sys, nu, SIGMA_DELTA0, &icfg)?;
            let dir = out_dir(g)?;
            write_xya_csv(&dir.join("sigma.csv"), &sigma.trajectory)?;
            writeln!(out, "p {} {} {}", fmt17(sigma.p.x), fmt17(sigma.p.y), fmt17(sigma.p.a)).map_err(io)?;
        }
        Command::Strata { x, y, a } => {
            writeln!(out, "{:?}", stratify(*x, *y, *a, STRATIFY_TOL)).map_err(io)?;
        }
        Command::Germ { poly } => {
            let germ = Germ::new(parse_poly(poly)?)?;
            let c = germ_codimension(&germ, GERM_MAX_DEGREE)?;
            writeln!(out, "codim {}", c.codim).map_err(io)?;
            writeln!(out, "basis {}", c.basis_strings().join(" ")).map_err(io)?;
        }
        Command::ClassifyFast(f) => {
            let p = FastParams::new(f.a, f.b, f.c);
            writeln!(out, "configuration {:?}", classify_config(&p)?).map_err(io)?;
            for e in fast_equilibria(&p, A_ZERO_TOL) {
                writeln!(
                    out,
                    "equilibrium {} {} {:?} det {} trace {}",
                    fmt17(e.pos[0]),
                    fmt17(e.pos[1]),
                    e.kind,
                    fmt17(e.det),
                    fmt17(e.trace)
                )
                .map_err(io)?;
            }
        }
        Command::Jumps(f) => {
            let p = FastParams::new(f.a, f.b, f.c);
            let mut jcfg = JumpConfig::default();
            if let Some(n) = g.nu {
                jcfg.nu = n;
            }
            for l in jump_outcomes(&p, &jcfg)? {
                let start = format!("{} {}", fmt17(l.start[0]), fmt17(l.start[1]));
                let line = match l.outcome {
                    JumpOutcome::Escape {
                        exit_state,
                        flight_time,
                    } => format!(
                        "launch {start} escape {} {} t {}",
                        fmt17(exit_state[0]),
                        fmt17(exit_state[1]),
                        fmt17(flight_time)
                    ),
                    JumpOutcome::ToEquilibrium {
                        index,
                        kind,
                        flight_time,
                    } => {
                        format!("launch {start} equilibrium {index} {kind:?} t {}", fmt17(flight_time))
                    }
                    JumpOutcome::Undecided { flight_time } => {
                        format!("launch {start} undecided t {}", fmt17(flight_time))
                    }
                };
                writeln!(out, "{line}").map_err(io)?;
            }
        }
        Command::ChartsCheck { samples, rng_seed } => {
            let sys = load_system(g)?;
            let atlas = ChartAtlas::new(&sys)?;
            let mut rng = ChaCha8Rng::seed_from_u64(*rng_seed);
            for chart in ChartId::ALL {
                let worst = (0..*samples)
                    .map(|_| {
                        let mut c: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
                        c[chart.radial_slot()] = rng.gen_range(0.05..1.0);
                        pushforward_error(&atlas, &ChartPoint::new(chart, c))
                    })
                    .fold(0.0, f64::max);
                writeln!(out, "chart {} max_rel_error {}", chart.name(), fmt17(worst)).map_err(io)?;
            }
        }
        Command::Dividing { b0, c0, s, t } => {
            let m = gamma_family(*b0, *c0, *s, *t)?;
            writeln!(
                out,
                "gamma x2 {} y2 {} a2 {} b2 {} c2 {}",
                fmt17(m.x2),
                fmt17(m.y2),
                fmt17(m.a2),
                fmt17(m.b2),
                fmt17(m.c2)
            )
            .map_err(io)?;
            writeln!(out, "s0 {}", fmt17(s_critical(*b0, *c0))).map_err(io)?;
            writeln!(out, "target {}", classify_gamma(*b0, *c0, *s)?.name()).map_err(io)?;
        }
        Command::Airy { z } => {
            let v = airy(*z)?;
            writeln!(
                out,
                "Ai={} Ai'={} Bi={} Bi'={}",
                fmt17(v.ai),
                fmt17(v.aip),
                fmt17(v.bi),
                fmt17(v.bip)
            )
            .map_err(io)?;
        }
        Command::AltUnfolding {
            center,
            drift,
            rng_seed,
        } => {
            let mut cfg = AltConfig {
                rng_seed: *rng_seed,
                ..AltConfig::default()
            };
            if let Some(c) = center {
                cfg.center.copy_from_slice(c);
            }
            if let Some(d) = drift {
                cfg.g.copy_from_slice(d);
            }
            if let Some(e) = g.eps {
                cfg.eps = e;
            }
            if let Some(n) = g.nu {
                cfg.nu = n;
            }
            if let Some(n) = g.seeds {
                cfg.seeds = n;
            }
            let res = alt_unfolding_experiment(&cfg)?;
            let dir = out_dir(g)?;
            for (i, r) in res.runs.iter().enumerate() {
                write_trajectory_csv(&dir.join(format!("alt_traj_{i}.csv")), &r.trajectory)?;
                let angle = r.exit_angle.map_or("none".to_string(), |a| fmt17(a.to_degrees()));
                writeln!(out, "run {i} min_radius {} exit_angle_deg {angle}", fmt17(r.min_radius)).map_err(io)?;
            }
            writeln!(out, "directions {} fan_out {}", res.distinct_directions, res.fan_out).map_err(io)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut o = Vec::new();
        let mut e = Vec::new();
        let argv = std::iter::once("umbilic").chain(args.iter().copied());
        let code = dispatch(argv, &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn airy_at_zero() {
        let (code, out, _) = call(&["airy", "--z", "0"]);
        assert_eq!(code, 0);
        assert!(out.starts_with("Ai=0.35502805"), "{out}");
    }

    #[test]
    fn germ_codim() {
        let (code, out, _) = call(&["germ", "--poly", "x^3+y^3"]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().next(), Some("codim 3"));
    }

    #[test]
    fn usage_and_domain_errors() {
        assert_eq!(call(&["airy", "--z", "0", "--bogus"]).0, 2);
        assert_eq!(call(&["fanout", "--config", "/nonexistent/run.toml"]).0, 2);
        let (code, _, err) = call(&["airy", "--z", "100"]);
        assert_eq!(code, 1);
        assert!(err.starts_with("error kind=airy message="), "{err}");
        assert_eq!(err.lines().count(), 1);
        assert_eq!(
            call(&["dividing", "--B0", "1", "--C0", "1", "--s", "0", "--t", "5"]).0,
            1
        );
    }
}
