use std::path::Path;
use std::process::{Command, Output};

use umbilic::experiments::RunConfig;

const BIN: &str = env!("CARGO_BIN_EXE_umbilic");

fn config(name: &str) -> String {
    format!("{}/configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn files_under(dir: &Path) -> Vec<String> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        let p = e.path();
        if p.is_dir() {
            v.extend(files_under(&p));
        } else {
            v.push(p.display().to_string());
        }
    }
    v
}

#[test]
fn fanout_writes_exits_with_all_classes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["fanout", "--config", &config("constant.toml"), "--jobs", "2"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/exits.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("seed_id,x,y,a,b,c,x5,class,flight_time"));
    let classes: std::collections::BTreeSet<String> = lines.map(|l| l.split(',').nth(7).unwrap().to_string()).collect();
    assert_eq!(classes.len(), 3, "{classes:?}");
    // Only the output directory is written.
    for f in files_under(dir.path()) {
        assert!(Path::new(&f).starts_with(dir.path().join("out")), "{f}");
    }
}

#[test]
fn dumped_config_reparses_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "simulate",
            "--dump-config",
            "--config",
            &config("constant.toml"),
            "--eps",
            "2e-4",
        ],
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = RunConfig::from_toml(&text).unwrap();
    assert_eq!(cfg.eps, 2e-4);
    assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert!(files_under(dir.path()).is_empty());
}

#[test]
fn simulate_writes_trajectories_into_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "simulate",
            "--config",
            &config("constant.toml"),
            "--seeds",
            "2",
            "--out",
            "results",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["traj_0.csv", "traj_1.csv", "exits.csv", "plot_exits.py"] {
        assert!(dir.path().join("results").join(f).is_file(), "{f}");
    }
    let t = std::fs::read_to_string(dir.path().join("results/traj_0.csv")).unwrap();
    assert!(t.starts_with("t,x,y,a,b,c\n"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["airy", "--z", "0"]).status.code(), Some(0));
    assert_eq!(
        run(dir.path(), &["airy", "--z", "0", "--frobnicate"]).status.code(),
        Some(2)
    );
    assert_eq!(run(dir.path(), &["fanout"]).status.code(), Some(1));
    assert_eq!(
        run(dir.path(), &["fanout", "--config", "missing.toml"]).status.code(),
        Some(2)
    );
    let out = run(dir.path(), &["germ", "--poly", "x*y*"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error kind=parse "), "{err}");
}

#[test]
fn sweep_reports_degenerate_fit_for_invariant_plane() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["sweep", "--config", &config("factored.toml"), "--points", "5"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error kind=degenerate_fit"));
}

#[test]
fn point_queries() {
    let dir = tempfile::tempdir().unwrap();
    let text = |args: &[&str]| String::from_utf8(run(dir.path(), args).stdout).unwrap();
    assert_eq!(
        text(&["strata", "--x", "0", "--y", "0", "--a", "0"]).trim(),
        "HyperbolicUmbilic"
    );
    assert!(text(&["classify-fast", "--a", "0", "--b", "1", "--c", "1"]).starts_with("configuration A"));
    let below = text(&["dividing", "--B0", "2", "--C0", "1", "--s", "0", "--t", "-1"]);
    assert!(below.contains("target q6"), "{below}");
    let above = text(&["dividing", "--B0", "2", "--C0", "1", "--s", "1", "--t", "-1"]);
    assert!(above.contains("target q4"), "{above}");
    let c = text(&["charts-check", "--samples", "50"]);
    assert_eq!(c.lines().count(), 5);
    for line in c.lines() {
        let e: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
        assert!(e <= 1e-9, "{line}");
    }
}
