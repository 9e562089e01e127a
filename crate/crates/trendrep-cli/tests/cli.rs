//! End-to-end subcommand tests against the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trendrep"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small three-market setup with short windows so debug builds stay fast.
fn write_config(dir: &Path) {
    let universe = r#"
[[contracts]]
root = "AA"
asset_class = "equity"
exchange = "SIM"
tx_cost_bp = 2.0
roll_drag_bp = 15.0

[[contracts]]
root = "BB"
asset_class = "fixed_income"
exchange = "SIM"
tx_cost_bp = 2.0
roll_drag_bp = 10.0

[[contracts]]
root = "CC"
asset_class = "commodity"
exchange = "SIM"
tx_cost_bp = 2.0
roll_drag_bp = 15.0
"#;
    std::fs::write(dir.join("universe.toml"), universe).unwrap();
    let config = r#"
[data]
universe = "universe.toml"
price_dir = "prices"
benchmark = "out/benchmark.csv"

[horizons]
short = [10, 20]
long = [60]

[costs]
tx_cost_bp = 2.0

[run]
days_per_year = 252
seed = 7
output_dir = "out"

[simulate]
n_days = 400
mu = 0.05
sigma = 0.15
s0 = 100.0
"#;
    std::fs::write(dir.join("run.toml"), config).unwrap();
}

#[test]
fn pipeline_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    assert_success(&run(&["simulate", "--config", "run.toml"], dir.path()));
    for root in ["AA", "BB", "CC"] {
        assert!(dir.path().join(format!("prices/{root}.csv")).exists());
    }

    assert_success(&run(&["factors", "--config", "run.toml"], dir.path()));
    let factors1 = std::fs::read(dir.path().join("out/factors.csv")).unwrap();
    let header = String::from_utf8_lossy(&factors1);
    assert!(header.starts_with("date,market,st_score,lt_score,mkt_return\n"));
    assert_success(&run(&["factors", "--config", "run.toml"], dir.path()));
    let factors2 = std::fs::read(dir.path().join("out/factors.csv")).unwrap();
    assert_eq!(factors1, factors2, "factors output must be byte-identical");

    assert_success(&run(&["filter", "--config", "run.toml"], dir.path()));
    let posterior1 = std::fs::read(dir.path().join("out/posterior.csv")).unwrap();
    assert!(dir.path().join("out/replication.csv").exists());
    assert_success(&run(&["filter", "--config", "run.toml"], dir.path()));
    let posterior2 = std::fs::read(dir.path().join("out/posterior.csv")).unwrap();
    assert_eq!(posterior1, posterior2, "filter output must be byte-identical");

    assert_success(&run(
        &["backtest", "--config", "run.toml", "--format", "csv"],
        dir.path(),
    ));
    let gross = std::fs::read_to_string(dir.path().join("out/report_gross.csv")).unwrap();
    assert!(gross.starts_with("statistic,LTT,MKT,STT+LTT,STT,MKT+STT+LTT,MKT+STT,SGCTAT\n"));
    assert!(dir.path().join("out/report_net.csv").exists());
    assert!(dir.path().join("out/manifest_backtest.txt").exists());
}

#[test]
fn missing_price_file_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    assert_success(&run(&["simulate", "--config", "run.toml"], dir.path()));
    std::fs::remove_file(dir.path().join("prices/BB.csv")).unwrap();
    let out = run(&["factors", "--config", "run.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("BB"), "stderr must name the root: {stderr}");
}

#[test]
fn bad_config_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "not [valid").unwrap();
    let out = run(&["factors", "--config", "run.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn backtest_rejects_bad_sleeves() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    assert_success(&run(&["simulate", "--config", "run.toml"], dir.path()));
    let out = run(
        &["backtest", "--config", "run.toml", "--sleeves", "NOPE"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let out = run(
        &["backtest", "--config", "run.toml", "--sleeves", ""],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn frontier_reproduces_indifference_report() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("points.csv"),
        "label,rho,y\nLTT,0.81,0.32\nA,0.85,0.38\nB,0.80,0.47\n",
    )
    .unwrap();
    let out = run(
        &[
            "frontier",
            "--points",
            "points.csv",
            "--alphas",
            "0.30,0.50,0.70",
            "--output",
            "fr",
        ],
        dir.path(),
    );
    assert_success(&out);
    for name in [
        "frontier.csv",
        "curve_alpha_030.csv",
        "curve_alpha_050.csv",
        "curve_alpha_070.csv",
        "indifference.txt",
    ] {
        assert!(dir.path().join("fr").join(name).exists(), "{name}");
    }
    let report = std::fs::read_to_string(dir.path().join("fr/indifference.txt")).unwrap();
    let alpha: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("alpha: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((alpha - 0.78).abs() < 0.01, "alpha {alpha}");
    let membership = std::fs::read_to_string(dir.path().join("fr/frontier.csv")).unwrap();
    assert!(membership.contains("LTT,0.81,0.32,false"));
}

#[test]
fn frontier_single_point_skips_indifference() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("points.csv"), "label,rho,y\nA,0.5,0.5\n").unwrap();
    let out = run(
        &["frontier", "--points", "points.csv", "--output", "fr"],
        dir.path(),
    );
    assert_success(&out);
    let membership = std::fs::read_to_string(dir.path().join("fr/frontier.csv")).unwrap();
    assert!(membership.contains("A,0.5,0.5,true"));
    assert!(!dir.path().join("fr/indifference.txt").exists());
}
