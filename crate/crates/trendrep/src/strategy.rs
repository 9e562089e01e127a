//! Sleeve assembly, performance statistics, correlation matrices, and
//! report rendering.
//!
//! A sleeve is a strategy variant defined by which regressor subsets (ST,
//! LT, MKT) feed the filter; the benchmark sleeve passes an external return
//! series through unchanged.

use std::collections::HashMap;
use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

use crate::factor_engine::{FactorKind, FactorPanel};
use crate::market_data::ReturnSeries;
use crate::parallel::par_map;
use crate::state_space::{
    filter_forward, panel_observations, replicate_returns, FilterConfig, StateSpaceError,
};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("unknown sleeve name {0:?}")]
    UnknownSleeve(String),
    #[error("benchmark sleeve requires an external return series")]
    MissingBenchmark,
    #[error("need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("series have fewer than 3 common dates")]
    NoOverlap,
    #[error("label count {labels} does not match series count {series}")]
    LabelMismatch { labels: usize, series: usize },
    #[error(transparent)]
    Filter(#[from] StateSpaceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("benchmark csv {path}: {message}")]
    BenchmarkParse { path: String, message: String },
}

/// The seven portfolios under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SleeveName {
    Ltt,
    Mkt,
    SttLtt,
    Stt,
    MktSttLtt,
    MktStt,
    Benchmark,
}

impl SleeveName {
    /// Report column order.
    pub const REPORT_ORDER: [SleeveName; 7] = [
        SleeveName::Ltt,
        SleeveName::Mkt,
        SleeveName::SttLtt,
        SleeveName::Stt,
        SleeveName::MktSttLtt,
        SleeveName::MktStt,
        SleeveName::Benchmark,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SleeveName::Ltt => "LTT",
            SleeveName::Mkt => "MKT",
            SleeveName::SttLtt => "STT+LTT",
            SleeveName::Stt => "STT",
            SleeveName::MktSttLtt => "MKT+STT+LTT",
            SleeveName::MktStt => "MKT+STT",
            SleeveName::Benchmark => "SGCTAT",
        }
    }

    /// Regressor kinds feeding the filter; empty for the benchmark.
    pub fn components(self) -> &'static [FactorKind] {
        match self {
            SleeveName::Ltt => &[FactorKind::Lt],
            SleeveName::Mkt => &[FactorKind::Mkt],
            SleeveName::SttLtt => &[FactorKind::St, FactorKind::Lt],
            SleeveName::Stt => &[FactorKind::St],
            SleeveName::MktSttLtt => &[FactorKind::Mkt, FactorKind::St, FactorKind::Lt],
            SleeveName::MktStt => &[FactorKind::Mkt, FactorKind::St],
            SleeveName::Benchmark => &[],
        }
    }

    pub fn parse(s: &str) -> Result<Self, StrategyError> {
        let canon = s.trim().to_ascii_uppercase().replace('_', "+");
        match canon.as_str() {
            "LTT" => Ok(SleeveName::Ltt),
            "MKT" => Ok(SleeveName::Mkt),
            "STT+LTT" | "LTT+STT" => Ok(SleeveName::SttLtt),
            "STT" => Ok(SleeveName::Stt),
            "MKT+STT+LTT" => Ok(SleeveName::MktSttLtt),
            "MKT+STT" => Ok(SleeveName::MktStt),
            "SGCTAT" | "BENCHMARK" => Ok(SleeveName::Benchmark),
            _ => Err(StrategyError::UnknownSleeve(s.to_string())),
        }
    }
}

/// One-step replication stream for a sleeve. The filter runs with exactly
/// the regressor subset named by the sleeve; the factor kinds named in
/// `components` select panel columns in their stated order within each
/// market.
pub fn build_sleeve_returns(
    name: SleeveName,
    panel: &FactorPanel,
    benchmark: &ReturnSeries,
    config: &FilterConfig,
) -> Result<ReturnSeries, StrategyError> {
    if name == SleeveName::Benchmark {
        return Ok(benchmark.clone());
    }
    let kinds = name.components();
    let obs = panel_observations(panel, kinds, benchmark)?;
    let y: Vec<f64> = obs.iter().map(|o| o.y).collect();
    let labels = panel.regressor_labels(kinds);
    // group regressors by market for the optional within-class correlation
    let groups: Vec<usize> = (0..labels.len()).map(|i| i / kinds.len()).collect();
    let model = config.build_model(labels, Some(&groups), &y)?;
    let path = filter_forward(&model, &obs)?;
    Ok(replicate_returns(&model, &path, &obs)?)
}

/// Replication streams for several sleeves, computed in parallel.
pub fn build_all_sleeves(
    names: &[SleeveName],
    panel: &FactorPanel,
    benchmark: &ReturnSeries,
    config: &FilterConfig,
) -> Result<Vec<(SleeveName, ReturnSeries)>, StrategyError> {
    let results = par_map(names.to_vec(), |name| {
        build_sleeve_returns(name, panel, benchmark, config).map(|r| (name, r))
    });
    results.into_iter().collect()
}

/// Risk and return statistics of one return stream. Ratio fields are `None`
/// when their denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerformanceReport {
    pub cumulative_return: f64,
    pub annual_return: f64,
    pub volatility: f64,
    pub sharpe: Option<f64>,
    pub max_drawdown: f64,
    pub return_over_maxdd: Option<f64>,
    pub sharpe_over_maxdd: Option<f64>,
}

/// Compute the report. Cumulative return compounds multiplicatively, the
/// annual figure is the geometric annualization, volatility is the sample
/// standard deviation scaled by sqrt(days_per_year), Sharpe is absolute
/// (zero risk-free), and drawdown is measured on the compounded curve.
pub fn performance(
    r: &ReturnSeries,
    days_per_year: usize,
) -> Result<PerformanceReport, StrategyError> {
    let t = r.len();
    if t < 2 {
        return Err(StrategyError::TooShort { needed: 2, got: t });
    }
    let cumulative: f64 = r.values.iter().map(|v| 1.0 + v).product::<f64>() - 1.0;
    let annual = (1.0 + cumulative).powf(days_per_year as f64 / t as f64) - 1.0;
    let mean = r.values.iter().sum::<f64>() / t as f64;
    // a literally constant stream has zero volatility; the summed squares
    // may round to a nonzero subnormal otherwise
    let constant = r.values.windows(2).all(|w| w[0] == w[1]);
    let var = if constant {
        0.0
    } else {
        r.values
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / (t as f64 - 1.0)
    };
    let volatility = var.sqrt() * (days_per_year as f64).sqrt();
    let sharpe = if volatility > 0.0 {
        Some(annual / volatility)
    } else {
        None
    };

    let mut equity = 1.0;
    let mut peak = 1.0f64;
    let mut max_drawdown = 0.0f64;
    for v in &r.values {
        equity *= 1.0 + v;
        peak = peak.max(equity);
        max_drawdown = max_drawdown.max(1.0 - equity / peak);
    }

    let over_dd = |x: Option<f64>| match x {
        Some(x) if max_drawdown > 0.0 => Some(x / max_drawdown),
        _ => None,
    };
    Ok(PerformanceReport {
        cumulative_return: cumulative,
        annual_return: annual,
        volatility,
        sharpe,
        max_drawdown,
        return_over_maxdd: over_dd(Some(annual)),
        sharpe_over_maxdd: over_dd(sharpe),
    })
}

/// Pearson correlation matrix over the common date intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    /// Row-major; NaN where a series is constant on the intersection.
    pub values: Vec<f64>,
    pub n_common_dates: usize,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.labels.len() + j]
    }
}

pub fn correlation_matrix(
    labeled: &[(String, ReturnSeries)],
) -> Result<CorrelationMatrix, StrategyError> {
    let n = labeled.len();
    if n == 0 {
        return Err(StrategyError::NoOverlap);
    }
    let mut common: Vec<NaiveDate> = labeled[0].1.dates.clone();
    for (_, s) in &labeled[1..] {
        let set: std::collections::BTreeSet<NaiveDate> = s.dates.iter().copied().collect();
        common.retain(|d| set.contains(d));
    }
    if common.len() < 3 {
        return Err(StrategyError::NoOverlap);
    }
    let aligned: Vec<Vec<f64>> = labeled
        .iter()
        .map(|(_, s)| {
            let map: HashMap<NaiveDate, f64> = s
                .dates
                .iter()
                .copied()
                .zip(s.values.iter().copied())
                .collect();
            common.iter().map(|d| map[d]).collect()
        })
        .collect();
    let t = common.len() as f64;
    let stats: Vec<(f64, f64)> = aligned
        .iter()
        .map(|v| {
            let mean = v.iter().sum::<f64>() / t;
            let ss = if v.windows(2).all(|w| w[0] == w[1]) {
                0.0
            } else {
                v.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
            };
            (mean, ss)
        })
        .collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let rho = if i == j {
                1.0
            } else {
                let num: f64 = aligned[i]
                    .iter()
                    .zip(&aligned[j])
                    .map(|(a, b)| (a - stats[i].0) * (b - stats[j].0))
                    .sum();
                let den = (stats[i].1 * stats[j].1).sqrt();
                if den > 0.0 {
                    num / den
                } else {
                    f64::NAN
                }
            };
            values[i * n + j] = rho;
            values[j * n + i] = rho;
        }
    }
    Ok(CorrelationMatrix {
        labels: labeled.iter().map(|(l, _)| l.clone()).collect(),
        values,
        n_common_dates: common.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

fn fmt_opt(x: Option<f64>, format: ReportFormat) -> String {
    match (x, format) {
        (Some(v), ReportFormat::Text) => format!("{v:.2}"),
        (Some(v), ReportFormat::Csv) => format!("{v:.6}"),
        (None, _) => "n/a".to_string(),
    }
}

/// Render the performance table (columns in the given order) and the lower
/// triangle of the correlation matrix.
pub fn report_tables(
    reports: &[(String, PerformanceReport)],
    matrix: &CorrelationMatrix,
    format: ReportFormat,
) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("statistic");
            for (label, _) in reports {
                out.push(',');
                out.push_str(label);
            }
            out.push('\n');
            type Cell = Box<dyn Fn(&PerformanceReport) -> String>;
            let rows: [(&str, Cell); 7] = [
                ("cumulative_return", Box::new(|r| format!("{:.6}", r.cumulative_return))),
                ("annual_return", Box::new(|r| format!("{:.6}", r.annual_return))),
                ("volatility", Box::new(|r| format!("{:.6}", r.volatility))),
                ("sharpe", Box::new(|r| fmt_opt(r.sharpe, ReportFormat::Csv))),
                ("max_drawdown", Box::new(|r| format!("{:.6}", r.max_drawdown))),
                ("return_over_maxdd", Box::new(|r| fmt_opt(r.return_over_maxdd, ReportFormat::Csv))),
                ("sharpe_over_maxdd", Box::new(|r| fmt_opt(r.sharpe_over_maxdd, ReportFormat::Csv))),
            ];
            for (name, f) in rows {
                out.push_str(name);
                for (_, r) in reports {
                    out.push(',');
                    out.push_str(&f(r));
                }
                out.push('\n');
            }
            out.push('\n');
            out.push_str("correlation");
            for l in &matrix.labels {
                out.push(',');
                out.push_str(l);
            }
            out.push('\n');
            let n = matrix.labels.len();
            for i in 0..n {
                out.push_str(&matrix.labels[i]);
                for j in 0..n {
                    out.push(',');
                    if j <= i {
                        let v = matrix.get(i, j);
                        if v.is_nan() {
                            out.push_str("n/a");
                        } else {
                            out.push_str(&format!("{v:.6}"));
                        }
                    }
                }
                out.push('\n');
            }
        }
        ReportFormat::Text => {
            let width = reports
                .iter()
                .map(|(l, _)| l.len())
                .chain(std::iter::once(18))
                .max()
                .unwrap_or(12)
                + 2;
            out.push_str(&format!("{:<20}", "statistic"));
            for (label, _) in reports {
                out.push_str(&format!("{label:>width$}"));
            }
            out.push('\n');
            let mut row = |name: &str, cells: Vec<String>| {
                out.push_str(&format!("{name:<20}"));
                for c in cells {
                    out.push_str(&format!("{c:>width$}"));
                }
                out.push('\n');
            };
            row(
                "cumulative return",
                reports.iter().map(|(_, r)| format!("{:.1}%", r.cumulative_return * 100.0)).collect(),
            );
            row(
                "annual return",
                reports.iter().map(|(_, r)| format!("{:.1}%", r.annual_return * 100.0)).collect(),
            );
            row(
                "volatility",
                reports.iter().map(|(_, r)| format!("{:.1}%", r.volatility * 100.0)).collect(),
            );
            row(
                "sharpe",
                reports.iter().map(|(_, r)| fmt_opt(r.sharpe, ReportFormat::Text)).collect(),
            );
            row(
                "max drawdown",
                reports.iter().map(|(_, r)| format!("{:.1}%", r.max_drawdown * 100.0)).collect(),
            );
            row(
                "return / maxdd",
                reports.iter().map(|(_, r)| fmt_opt(r.return_over_maxdd, ReportFormat::Text)).collect(),
            );
            row(
                "sharpe / maxdd",
                reports.iter().map(|(_, r)| fmt_opt(r.sharpe_over_maxdd, ReportFormat::Text)).collect(),
            );
            out.push('\n');
            out.push_str(&format!(
                "correlations ({} common dates), lower triangle\n",
                matrix.n_common_dates
            ));
            let n = matrix.labels.len();
            out.push_str(&format!("{:<14}", ""));
            for l in &matrix.labels {
                out.push_str(&format!("{l:>14}"));
            }
            out.push('\n');
            for i in 0..n {
                out.push_str(&format!("{:<14}", matrix.labels[i]));
                for j in 0..n {
                    if j <= i {
                        let v = matrix.get(i, j);
                        if v.is_nan() {
                            out.push_str(&format!("{:>14}", "n/a"));
                        } else {
                            out.push_str(&format!("{v:>14.2}"));
                        }
                    } else {
                        out.push_str(&format!("{:>14}", ""));
                    }
                }
                out.push('\n');
            }
        }
    }
    out
}

/// Load a benchmark return CSV with header `date,return`.
pub fn load_benchmark_returns(path: &Path) -> Result<ReturnSeries, StrategyError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| StrategyError::BenchmarkParse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    let mut rows: Vec<(NaiveDate, f64)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let bad = |message: String| StrategyError::BenchmarkParse {
            path: path.display().to_string(),
            message: format!("row {}: {}", i + 2, message),
        };
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() < 2 {
            return Err(bad("expected two columns".into()));
        }
        let date = record[0]
            .parse::<NaiveDate>()
            .map_err(|e| bad(e.to_string()))?;
        let value = record[1]
            .trim()
            .parse::<f64>()
            .map_err(|e| bad(e.to_string()))?;
        if !value.is_finite() {
            return Err(bad(format!("non-finite return {value}")));
        }
        rows.push((date, value));
    }
    rows.sort_by_key(|(d, _)| *d);
    for pair in rows.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(StrategyError::BenchmarkParse {
                path: path.display().to_string(),
                message: format!("duplicate date {}", pair[0].0),
            });
        }
    }
    let (dates, values) = rows.into_iter().unzip();
    ReturnSeries::new(dates, values).map_err(|e| StrategyError::BenchmarkParse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Write a benchmark return CSV in the same layout `load_benchmark_returns`
/// accepts.
pub fn write_benchmark_returns(path: &Path, r: &ReturnSeries) -> Result<(), StrategyError> {
    let mut out = String::from("date,return\n");
    for (d, v) in r.dates.iter().zip(&r.values) {
        out.push_str(&format!("{d},{v:.12e}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}
