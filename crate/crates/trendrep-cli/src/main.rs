//! `trendrep` command-line front end.
//!
//! Subcommands wire the pipeline end to end: `simulate` writes a seeded
//! synthetic dataset, `factors` exports the regressor panel, `filter` runs
//! the coefficient filter/smoother, `backtest` renders performance and
//! correlation reports for the sleeves, and `frontier` emits iso-utility
//! curves with Pareto membership.
//!
//! Exit codes: 0 success, 1 computation error, 2 input error.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use trendrep::analytics::{
    cobb_douglas, indifference_alpha, iso_utility_curve, pareto_frontier, UtilityPoint,
};
use trendrep::cost_model::{all_in_cost_bp, apply_costs, CostAssumptions};
use trendrep::factor_engine::{build_panel, FactorKind, FactorPanel, HorizonSet};
use trendrep::market_data::{
    load_prices, load_universe, simulate_gbm, write_prices, GbmSpec, PriceSeries, ReturnSeries,
    Universe,
};
use trendrep::state_space::{
    filter_forward, grid_search_hyperparams, panel_observations, smooth_backward, FilterConfig,
    StateSpaceModel,
};
use trendrep::strategy::{
    build_all_sleeves, correlation_matrix, load_benchmark_returns, performance, report_tables,
    write_benchmark_returns, PerformanceReport, ReportFormat, SleeveName,
};

#[derive(Parser)]
#[command(name = "trendrep", version, about = "Trend-factor replication pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a seeded synthetic price set and benchmark for the universe.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build the factor panel and export it as CSV.
    Factors {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the filter/smoother; export the posterior and the replication.
    Filter {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build sleeves, then render performance and correlation reports.
    Backtest {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated sleeve names; defaults to all seven.
        #[arg(long, value_delimiter = ',')]
        sleeves: Option<Vec<String>>,
        /// text or csv
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Iso-utility curves and Pareto membership from a points file.
    Frontier {
        /// CSV with header `label,rho,y`.
        #[arg(long)]
        points: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.30, 0.50, 0.70])]
        alphas: Vec<f64>,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Input problems exit with 2, computation problems with 1.
enum AppError {
    Input(anyhow::Error),
    Compute(anyhow::Error),
}

impl AppError {
    fn input<E: Into<anyhow::Error>>(e: E) -> Self {
        AppError::Input(e.into())
    }

    fn compute<E: Into<anyhow::Error>>(e: E) -> Self {
        AppError::Compute(e.into())
    }
}

type AppResult<T> = Result<T, AppError>;

#[derive(Deserialize)]
struct RunConfig {
    data: DataConfig,
    #[serde(default)]
    horizons: HorizonsConfig,
    #[serde(default)]
    filter: FilterConfig,
    #[serde(default)]
    costs: CostsConfig,
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    simulate: SimulateConfig,
}

#[derive(Deserialize)]
struct DataConfig {
    universe: PathBuf,
    price_dir: PathBuf,
    benchmark: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(default)]
struct HorizonsConfig {
    short: Vec<usize>,
    long: Vec<usize>,
}

impl Default for HorizonsConfig {
    fn default() -> Self {
        HorizonsConfig {
            short: vec![10, 20, 40, 60],
            long: vec![500],
        }
    }
}

#[derive(Deserialize)]
#[serde(default)]
struct CostsConfig {
    tx_cost_bp: f64,
    #[serde(flatten)]
    assumptions: CostAssumptions,
}

impl Default for CostsConfig {
    fn default() -> Self {
        CostsConfig {
            tx_cost_bp: 2.0,
            assumptions: CostAssumptions::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(default)]
struct RunSection {
    days_per_year: usize,
    seed: u64,
    output_dir: PathBuf,
    start: Option<NaiveDate>,
    end: Option<NaiveDate>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            days_per_year: 252,
            seed: 42,
            output_dir: PathBuf::from("out"),
            start: None,
            end: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(default)]
struct SimulateConfig {
    n_days: usize,
    mu: f64,
    sigma: f64,
    s0: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            n_days: 1500,
            mu: 0.05,
            sigma: 0.15,
            s0: 100.0,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Simulate { config } => cmd_simulate(&config),
        Cmd::Factors { config } => cmd_factors(&config),
        Cmd::Filter { config } => cmd_filter(&config),
        Cmd::Backtest {
            config,
            sleeves,
            format,
        } => cmd_backtest(&config, sleeves, &format),
        Cmd::Frontier {
            points,
            alphas,
            output,
        } => cmd_frontier(&points, &alphas, &output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Compute(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(AppError::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Path) -> AppResult<(RunConfig, Vec<u8>)> {
    let bytes = std::fs::read(path)
        .map_err(|e| AppError::input(anyhow::anyhow!("reading {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| AppError::input(anyhow::anyhow!("{}: {e}", path.display())))?;
    let config: RunConfig = toml::from_str(&text)
        .map_err(|e| AppError::input(anyhow::anyhow!("parsing {}: {e}", path.display())))?;
    Ok((config, bytes))
}

fn write_manifest(
    output_dir: &Path,
    command: &str,
    config_path: &Path,
    config_bytes: &[u8],
) -> AppResult<()> {
    let digest = Sha256::digest(config_bytes);
    let mut hex = String::new();
    for b in digest {
        write!(hex, "{b:02x}").expect("infallible");
    }
    let manifest = format!(
        "command: {command}\nconfig: {}\nconfig_sha256: {hex}\nversion: {}\n",
        config_path.display(),
        env!("CARGO_PKG_VERSION"),
    );
    std::fs::write(output_dir.join(format!("manifest_{command}.txt")), manifest)
        .map_err(AppError::compute)
}

fn ensure_output_dir(dir: &Path) -> AppResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| AppError::input(anyhow::anyhow!("creating {}: {e}", dir.display())))
}

fn horizon_sets(config: &RunConfig) -> AppResult<(HorizonSet, HorizonSet)> {
    let st = HorizonSet::new(config.horizons.short.clone()).map_err(AppError::input)?;
    let lt = HorizonSet::new(config.horizons.long.clone()).map_err(AppError::input)?;
    Ok((st, lt))
}

/// Keep only dates inside the configured range.
fn clip_series(p: &PriceSeries, run: &RunSection) -> AppResult<PriceSeries> {
    if run.start.is_none() && run.end.is_none() {
        return Ok(p.clone());
    }
    let keep: Vec<NaiveDate> = p
        .dates()
        .iter()
        .copied()
        .filter(|d| run.start.is_none_or(|s| *d >= s) && run.end.is_none_or(|e| *d <= e))
        .collect();
    p.restrict(&keep).map_err(AppError::input)
}

fn load_all_prices(
    universe: &Universe,
    config: &RunConfig,
) -> AppResult<HashMap<String, PriceSeries>> {
    let mut prices = HashMap::new();
    for root in universe.roots() {
        let path = config.data.price_dir.join(format!("{root}.csv"));
        let series = load_prices(&path, &root).map_err(AppError::input)?;
        prices.insert(root, clip_series(&series, &config.run)?);
    }
    Ok(prices)
}

fn build_panel_from_config(config: &RunConfig) -> AppResult<(Universe, FactorPanel)> {
    let universe = load_universe(&config.data.universe).map_err(AppError::input)?;
    let prices = load_all_prices(&universe, config)?;
    let (st, lt) = horizon_sets(config)?;
    let panel = build_panel(&universe, &prices, &st, &lt).map_err(AppError::compute)?;
    Ok((universe, panel))
}

fn load_benchmark(config: &RunConfig) -> AppResult<ReturnSeries> {
    let path = config
        .data
        .benchmark
        .as_ref()
        .ok_or_else(|| AppError::input(anyhow::anyhow!("config has no [data].benchmark path")))?;
    load_benchmark_returns(path).map_err(AppError::input)
}

fn cmd_simulate(config_path: &Path) -> AppResult<()> {
    let (config, bytes) = load_config(config_path)?;
    let universe = load_universe(&config.data.universe).map_err(AppError::input)?;
    ensure_output_dir(&config.data.price_dir)?;
    ensure_output_dir(&config.run.output_dir)?;

    let mut prices = HashMap::new();
    for (j, root) in universe.roots().into_iter().enumerate() {
        let series = simulate_gbm(&GbmSpec {
            mu: config.simulate.mu,
            sigma: config.simulate.sigma,
            s0: config.simulate.s0,
            n_days: config.simulate.n_days,
            days_per_year: config.run.days_per_year,
            seed: config.run.seed.wrapping_add(j as u64),
        })
        .map_err(AppError::compute)?;
        write_prices(&config.data.price_dir.join(format!("{root}.csv")), &series)
            .map_err(AppError::compute)?;
        prices.insert(root, series);
    }

    // the synthetic benchmark loads on all three factor kinds with a seeded
    // noise floor, so every sleeve has signal to recover
    let (st, lt) = horizon_sets(&config)?;
    let panel = build_panel(&universe, &prices, &st, &lt).map_err(AppError::compute)?;
    let n_markets = panel.markets().len() as f64;
    let signal: Vec<f64> = (0..panel.n_dates())
        .map(|t| {
            (0..panel.markets().len())
                .map(|j| {
                    (0.002 * panel.st(t, j) + 0.002 * panel.lt(t, j)
                        + 0.3 * panel.mkt_return(t, j))
                        / n_markets
                })
                .sum()
        })
        .collect();
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    let sd = (signal.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
        / (signal.len() as f64 - 1.0))
        .sqrt();
    let noise_path = simulate_gbm(&GbmSpec {
        mu: 0.0,
        sigma: 1.0,
        s0: 100.0,
        n_days: panel.n_dates() + 1,
        days_per_year: config.run.days_per_year,
        seed: config.run.seed.wrapping_add(10_000),
    })
    .map_err(AppError::compute)?;
    let noise: Vec<f64> = noise_path
        .values()
        .windows(2)
        .map(|w| (w[1] / w[0]).ln())
        .collect();
    let noise_scale = 0.2 * sd / (1.0 / config.run.days_per_year as f64).sqrt();
    let values: Vec<f64> = signal
        .iter()
        .zip(&noise)
        .map(|(s, z)| s + noise_scale * z)
        .collect();
    let bench = ReturnSeries::new(panel.dates().to_vec(), values).map_err(AppError::compute)?;
    let bench_path = config
        .data
        .benchmark
        .clone()
        .unwrap_or_else(|| config.run.output_dir.join("benchmark.csv"));
    write_benchmark_returns(&bench_path, &bench).map_err(AppError::compute)?;

    write_manifest(&config.run.output_dir, "simulate", config_path, &bytes)?;
    println!(
        "wrote {} price files and benchmark {} ({} dates)",
        universe.contracts.len(),
        bench_path.display(),
        bench.len()
    );
    Ok(())
}

fn cmd_factors(config_path: &Path) -> AppResult<()> {
    let (config, bytes) = load_config(config_path)?;
    let (universe, panel) = build_panel_from_config(&config)?;
    ensure_output_dir(&config.run.output_dir)?;
    let out = config.run.output_dir.join("factors.csv");
    std::fs::write(&out, panel.to_csv()).map_err(AppError::compute)?;
    write_manifest(&config.run.output_dir, "factors", config_path, &bytes)?;
    let max_w = config
        .horizons
        .short
        .iter()
        .chain(&config.horizons.long)
        .copied()
        .max()
        .unwrap_or(0);
    println!(
        "panel: {} markets x {} dates ({} to {}), warm-up {} days, wrote {}",
        universe.contracts.len(),
        panel.n_dates(),
        panel.dates()[0],
        panel.dates()[panel.n_dates() - 1],
        max_w - 1,
        out.display()
    );
    Ok(())
}

/// Build the full-regressor model, honoring the optional within-market
/// correlation prior and maximum-likelihood grid search.
fn resolve_model(
    config: &RunConfig,
    panel: &FactorPanel,
    y: &[f64],
) -> AppResult<StateSpaceModel> {
    let labels = panel.regressor_labels(&FactorKind::ALL);
    let groups: Vec<usize> = (0..labels.len()).map(|i| i / FactorKind::ALL.len()).collect();
    let model = config
        .filter
        .build_model(labels, Some(&groups), y)
        .map_err(AppError::input)?;
    Ok(model)
}

fn cmd_filter(config_path: &Path) -> AppResult<()> {
    let (config, bytes) = load_config(config_path)?;
    let (_, panel) = build_panel_from_config(&config)?;
    let bench = load_benchmark(&config)?;
    ensure_output_dir(&config.run.output_dir)?;

    let obs = panel_observations(&panel, &FactorKind::ALL, &bench).map_err(AppError::compute)?;
    let y: Vec<f64> = obs.iter().map(|o| o.y).collect();
    let mut model = resolve_model(&config, &panel, &y)?;
    if config.filter.grid_search {
        let (sb, se) = grid_search_hyperparams(&model, &obs, config.filter.grid_points)
            .map_err(AppError::compute)?;
        let tuned = FilterConfig {
            sigma_beta: sb,
            sigma_eps: Some(se),
            ..config.filter.clone()
        };
        let labels = panel.regressor_labels(&FactorKind::ALL);
        let groups: Vec<usize> =
            (0..labels.len()).map(|i| i / FactorKind::ALL.len()).collect();
        model = tuned
            .build_model(labels, Some(&groups), &y)
            .map_err(AppError::input)?;
        println!("grid search selected sigma_beta={sb:.3e} sigma_eps={se:.3e}");
    }
    let path = filter_forward(&model, &obs).map_err(AppError::compute)?;
    let smoothed = smooth_backward(&model, &path).map_err(AppError::compute)?;
    let replication = trendrep::state_space::replicate_returns(&model, &smoothed, &obs)
        .map_err(AppError::compute)?;

    let posterior_out = config.run.output_dir.join("posterior.csv");
    std::fs::write(&posterior_out, smoothed.to_csv(&model.regressor_labels))
        .map_err(AppError::compute)?;
    let replication_out = config.run.output_dir.join("replication.csv");
    write_benchmark_returns(&replication_out, &replication).map_err(AppError::compute)?;
    write_manifest(&config.run.output_dir, "filter", config_path, &bytes)?;
    println!(
        "filtered {} dates x {} regressors, loglik {:.3}, wrote {} and {}",
        smoothed.len(),
        model.regressor_labels.len(),
        smoothed.loglik,
        posterior_out.display(),
        replication_out.display()
    );
    Ok(())
}

fn cmd_backtest(
    config_path: &Path,
    sleeves: Option<Vec<String>>,
    format: &str,
) -> AppResult<()> {
    let format = match format {
        "text" => ReportFormat::Text,
        "csv" => ReportFormat::Csv,
        other => {
            return Err(AppError::input(anyhow::anyhow!(
                "unknown format {other:?}; use text or csv"
            )))
        }
    };
    let names: Vec<SleeveName> = match sleeves {
        None => SleeveName::REPORT_ORDER.to_vec(),
        Some(list) if list.iter().all(|s| s.trim().is_empty()) => {
            return Err(AppError::input(anyhow::anyhow!("empty sleeve list")))
        }
        Some(list) => list
            .iter()
            .map(|s| SleeveName::parse(s).map_err(AppError::input))
            .collect::<AppResult<Vec<_>>>()?,
    };
    let (config, bytes) = load_config(config_path)?;
    let (_, panel) = build_panel_from_config(&config)?;
    let bench = load_benchmark(&config)?;
    ensure_output_dir(&config.run.output_dir)?;

    let streams =
        build_all_sleeves(&names, &panel, &bench, &config.filter).map_err(AppError::compute)?;
    config.costs.assumptions.validate().map_err(AppError::input)?;
    let (cost_lo, cost_hi) = all_in_cost_bp(&config.costs.assumptions, config.costs.tx_cost_bp)
        .map_err(AppError::input)?;
    // a single net variant uses the midpoint of the all-in range
    let drag = 0.5 * (cost_lo + cost_hi);

    let mut gross_reports: Vec<(String, PerformanceReport)> = Vec::new();
    let mut net_reports: Vec<(String, PerformanceReport)> = Vec::new();
    let mut labeled: Vec<(String, ReturnSeries)> = Vec::new();
    for (name, stream) in &streams {
        let label = name.label().to_string();
        gross_reports.push((
            label.clone(),
            performance(stream, config.run.days_per_year).map_err(AppError::compute)?,
        ));
        let net = apply_costs(stream, drag, config.run.days_per_year);
        net_reports.push((
            label.clone(),
            performance(&net, config.run.days_per_year).map_err(AppError::compute)?,
        ));
        labeled.push((label, stream.clone()));
    }
    let matrix = correlation_matrix(&labeled).map_err(AppError::compute)?;

    let ext = match format {
        ReportFormat::Text => "txt",
        ReportFormat::Csv => "csv",
    };
    let gross_out = config.run.output_dir.join(format!("report_gross.{ext}"));
    let net_out = config.run.output_dir.join(format!("report_net.{ext}"));
    let gross_text = report_tables(&gross_reports, &matrix, format);
    std::fs::write(&gross_out, &gross_text).map_err(AppError::compute)?;
    std::fs::write(&net_out, report_tables(&net_reports, &matrix, format))
        .map_err(AppError::compute)?;
    write_manifest(&config.run.output_dir, "backtest", config_path, &bytes)?;
    println!(
        "all-in cost range [{cost_lo:.0}, {cost_hi:.0}] bp/yr, net uses {drag:.0} bp/yr"
    );
    println!("{gross_text}");
    println!("wrote {} and {}", gross_out.display(), net_out.display());
    Ok(())
}

fn parse_points(path: &Path) -> AppResult<Vec<(String, UtilityPoint)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::input(anyhow::anyhow!("reading {}: {e}", path.display())))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| {
            AppError::input(anyhow::anyhow!("{} line {}: {msg}", path.display(), i + 1))
        };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 3 {
            return Err(bad("expected label,rho,y".into()));
        }
        let rho: f64 = cells[1].trim().parse().map_err(|e| bad(format!("{e}")))?;
        let y: f64 = cells[2].trim().parse().map_err(|e| bad(format!("{e}")))?;
        let point = UtilityPoint::new(rho, y).map_err(|e| bad(e.to_string()))?;
        points.push((cells[0].trim().to_string(), point));
    }
    if points.is_empty() {
        return Err(AppError::input(anyhow::anyhow!(
            "{} contains no points",
            path.display()
        )));
    }
    Ok(points)
}

fn cmd_frontier(points_path: &Path, alphas: &[f64], output: &Path) -> AppResult<()> {
    let labeled = parse_points(points_path)?;
    ensure_output_dir(output)?;
    let points: Vec<UtilityPoint> = labeled.iter().map(|(_, p)| *p).collect();
    let frontier = pareto_frontier(&points);

    let mut membership = String::from("label,rho,y,on_frontier\n");
    for (i, (label, p)) in labeled.iter().enumerate() {
        let on = frontier.contains(&i);
        membership.push_str(&format!("{label},{},{},{on}\n", p.rho_corr, p.y));
    }
    let membership_out = output.join("frontier.csv");
    std::fs::write(&membership_out, membership).map_err(AppError::compute)?;

    let rho_grid: Vec<f64> = (5..=100).map(|i| i as f64 / 100.0).collect();
    for &alpha in alphas {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(AppError::input(anyhow::anyhow!(
                "alpha {alpha} outside (0, 1)"
            )));
        }
        // level set through the utility-maximizing point at this alpha
        let best = points
            .iter()
            .map(|p| cobb_douglas(p, alpha).expect("positive coordinates"))
            .fold(f64::NEG_INFINITY, f64::max);
        let curve = iso_utility_curve(best, alpha, &rho_grid).map_err(AppError::compute)?;
        let mut text = String::from("rho,y\n");
        for (rho, y) in curve {
            text.push_str(&format!("{rho},{y:.12e}\n"));
        }
        let name = format!("curve_alpha_{:03}.csv", (alpha * 100.0).round() as u32);
        std::fs::write(output.join(name), text).map_err(AppError::compute)?;
    }

    // indifference report for the two highest-y frontier points
    let mut ranked: Vec<usize> = frontier.clone();
    ranked.sort_by(|&a, &b| points[b].y.total_cmp(&points[a].y));
    if ranked.len() >= 2 {
        let (i, j) = (ranked[0], ranked[1]);
        match indifference_alpha(&points[i], &points[j]) {
            Ok((alpha, u)) => {
                let report = format!(
                    "points: {} ({}, {}), {} ({}, {})\nalpha: {alpha:.6}\nutility: {u:.6}\n",
                    labeled[i].0,
                    points[i].rho_corr,
                    points[i].y,
                    labeled[j].0,
                    points[j].rho_corr,
                    points[j].y,
                );
                std::fs::write(output.join("indifference.txt"), report)
                    .map_err(AppError::compute)?;
                println!("indifference alpha {alpha:.4}, utility {u:.4}");
            }
            Err(e) => println!("indifference report skipped: {e}"),
        }
    } else {
        println!("indifference report skipped: fewer than 2 frontier points");
    }
    let points_bytes = std::fs::read(points_path).map_err(AppError::input)?;
    write_manifest(output, "frontier", points_path, &points_bytes)?;
    println!(
        "frontier: {} of {} points, wrote {}",
        frontier.len(),
        labeled.len(),
        membership_out.display()
    );
    Ok(())
}
