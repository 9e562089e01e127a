//! Futures universe configuration, price series ingestion and synthetic data.
//!
//! Price input is one CSV per contract with header `date,price` (ISO dates,
//! positive decimal prices). The universe is a TOML file with one
//! `[[contracts]]` entry per contract. Calendars are implicit: a missing
//! date is simply an absent row and cross-contract alignment happens
//! downstream by date intersection.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse universe config: {0}")]
    UniverseParse(String),
    #[error("empty universe")]
    EmptyUniverse,
    #[error("duplicate contract root {0:?}")]
    DuplicateRoot(String),
    #[error("contract {root}: field {field} must be non-negative, got {value}")]
    NegativeCost {
        root: String,
        field: &'static str,
        value: f64,
    },
    #[error("{path}:{row}: {message}")]
    CsvRow {
        path: String,
        row: usize,
        message: String,
    },
    #[error("{path}: duplicate date {date}")]
    DuplicateDate { path: String, date: NaiveDate },
    #[error("{path}: fewer than 2 price rows")]
    TooShort { path: String },
    #[error("invalid series: {0}")]
    InvalidSeries(String),
}

/// Asset class of a futures contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetClass {
    Equity,
    FixedIncome,
    Currency,
    Commodity,
}

impl fmt::Display for AssetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AssetClass::Equity => "equity",
            AssetClass::FixedIncome => "fixed_income",
            AssetClass::Currency => "currency",
            AssetClass::Commodity => "commodity",
        };
        f.write_str(s)
    }
}

impl FromStr for AssetClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "equity" => Ok(AssetClass::Equity),
            "fixed_income" => Ok(AssetClass::FixedIncome),
            "currency" => Ok(AssetClass::Currency),
            "commodity" => Ok(AssetClass::Commodity),
            other => Err(format!("unknown asset class {other:?}")),
        }
    }
}

/// One futures contract with its representative round-turn and roll costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractSpec {
    pub root: String,
    pub asset_class: AssetClass,
    pub exchange: String,
    /// Basis points of notional per round-turn.
    pub tx_cost_bp: f64,
    /// Basis points per roll cycle.
    pub roll_drag_bp: f64,
}

/// Ordered, duplicate-free list of contracts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Universe {
    pub contracts: Vec<ContractSpec>,
}

impl Universe {
    pub fn new(contracts: Vec<ContractSpec>) -> Result<Self, DataError> {
        if contracts.is_empty() {
            return Err(DataError::EmptyUniverse);
        }
        let mut seen = BTreeSet::new();
        for c in &contracts {
            if !seen.insert(c.root.clone()) {
                return Err(DataError::DuplicateRoot(c.root.clone()));
            }
            for (field, value) in [("tx_cost_bp", c.tx_cost_bp), ("roll_drag_bp", c.roll_drag_bp)] {
                if !(value >= 0.0) {
                    return Err(DataError::NegativeCost {
                        root: c.root.clone(),
                        field,
                        value,
                    });
                }
            }
        }
        Ok(Universe { contracts })
    }

    pub fn roots(&self) -> Vec<String> {
        self.contracts.iter().map(|c| c.root.clone()).collect()
    }

    pub fn get(&self, root: &str) -> Option<&ContractSpec> {
        self.contracts.iter().find(|c| c.root == root)
    }
}

#[derive(Deserialize)]
struct UniverseFile {
    contracts: Vec<ContractSpec>,
}

/// Parse the universe TOML config, validating costs and root uniqueness.
pub fn load_universe(path: &Path) -> Result<Universe, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_universe(&text)
}

pub fn parse_universe(text: &str) -> Result<Universe, DataError> {
    let file: UniverseFile =
        toml::from_str(text).map_err(|e| DataError::UniverseParse(e.to_string()))?;
    Universe::new(file.contracts)
}

/// Strictly increasing dates with positive prices, length >= 2.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
}

impl PriceSeries {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self, DataError> {
        if dates.len() != values.len() {
            return Err(DataError::InvalidSeries(format!(
                "{} dates vs {} values",
                dates.len(),
                values.len()
            )));
        }
        if dates.len() < 2 {
            return Err(DataError::InvalidSeries("length < 2".into()));
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(DataError::InvalidSeries(format!(
                    "dates not strictly increasing at {}",
                    w[1]
                )));
            }
        }
        for (d, &v) in dates.iter().zip(&values) {
            if !(v > 0.0) || !v.is_finite() {
                return Err(DataError::InvalidSeries(format!(
                    "non-positive price {v} at {d}"
                )));
            }
        }
        Ok(PriceSeries { dates, values })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Restrict the series to the given dates (which must all be present),
    /// preserving order.
    pub fn restrict(&self, dates: &[NaiveDate]) -> Result<PriceSeries, DataError> {
        let mut values = Vec::with_capacity(dates.len());
        let mut cursor = 0usize;
        for d in dates {
            while cursor < self.dates.len() && self.dates[cursor] < *d {
                cursor += 1;
            }
            if cursor >= self.dates.len() || self.dates[cursor] != *d {
                return Err(DataError::InvalidSeries(format!("date {d} not in series")));
            }
            values.push(self.values[cursor]);
        }
        PriceSeries::new(dates.to_vec(), values)
    }
}

/// Simple daily returns aligned to dates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self, DataError> {
        if dates.len() != values.len() {
            return Err(DataError::InvalidSeries(format!(
                "{} dates vs {} values",
                dates.len(),
                values.len()
            )));
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(DataError::InvalidSeries(format!(
                    "dates not strictly increasing at {}",
                    w[1]
                )));
            }
        }
        Ok(ReturnSeries { dates, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `value_t = p_t / p_{t-1} - 1`, dated at `t`.
pub fn to_returns(p: &PriceSeries) -> ReturnSeries {
    let values: Vec<f64> = p.values.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    ReturnSeries {
        dates: p.dates[1..].to_vec(),
        values,
    }
}

/// Load a `date,price` CSV, sort rows by date and validate.
///
/// `root` only labels error messages; the file content is the contract data.
pub fn load_prices(path: &Path, root: &str) -> Result<PriceSeries, DataError> {
    let label = format!("{} ({root})", path.display());
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| DataError::CsvRow {
            path: label.clone(),
            row: 0,
            message: e.to_string(),
        })?;
    let mut rows: Vec<(NaiveDate, f64)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // header is row 1
        let record = record.map_err(|e| DataError::CsvRow {
            path: label.clone(),
            row,
            message: e.to_string(),
        })?;
        let date_field = record.get(0).unwrap_or("");
        let price_field = record.get(1).unwrap_or("");
        let date = NaiveDate::parse_from_str(date_field, "%Y-%m-%d").map_err(|_| {
            DataError::CsvRow {
                path: label.clone(),
                row,
                message: format!("unparsable date {date_field:?}"),
            }
        })?;
        let price: f64 = price_field.parse().map_err(|_| DataError::CsvRow {
            path: label.clone(),
            row,
            message: format!("unparsable price {price_field:?}"),
        })?;
        if !(price > 0.0) || !price.is_finite() {
            return Err(DataError::CsvRow {
                path: label.clone(),
                row,
                message: format!("non-positive price {price}"),
            });
        }
        rows.push((date, price));
    }
    if rows.len() < 2 {
        return Err(DataError::TooShort { path: label });
    }
    rows.sort_by_key(|(d, _)| *d);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(DataError::DuplicateDate {
                path: label,
                date: w[0].0,
            });
        }
    }
    let (dates, values) = rows.into_iter().unzip();
    PriceSeries::new(dates, values)
}

/// Write a series back out in the same `date,price` CSV format.
pub fn write_prices(path: &Path, p: &PriceSeries) -> Result<(), DataError> {
    let mut out = String::from("date,price\n");
    for (d, v) in p.dates.iter().zip(&p.values) {
        out.push_str(&format!("{d},{v}\n"));
    }
    std::fs::write(path, out).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Geometric Brownian motion specification, annualized drift and volatility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmSpec {
    pub mu: f64,
    pub sigma: f64,
    pub s0: f64,
    pub n_days: usize,
    pub days_per_year: usize,
    pub seed: u64,
}

impl GbmSpec {
    fn validate(&self) -> Result<(), DataError> {
        if !(self.sigma > 0.0) {
            return Err(DataError::InvalidSeries("gbm sigma must be > 0".into()));
        }
        if !(self.s0 > 0.0) {
            return Err(DataError::InvalidSeries("gbm s0 must be > 0".into()));
        }
        if self.n_days < 2 {
            return Err(DataError::InvalidSeries("gbm n_days must be >= 2".into()));
        }
        if self.days_per_year == 0 {
            return Err(DataError::InvalidSeries(
                "gbm days_per_year must be > 0".into(),
            ));
        }
        Ok(())
    }
}

fn next_weekday(mut d: NaiveDate) -> NaiveDate {
    loop {
        d = d.succ_opt().expect("date overflow");
        match d.weekday() {
            Weekday::Sat | Weekday::Sun => continue,
            _ => return d,
        }
    }
}

/// Exact log-normal stepping: `S_t = s0 * exp(sum of normal log-increments)`
/// with increment mean `(mu - sigma^2/2) / days_per_year` and variance
/// `sigma^2 / days_per_year`. Deterministic for a fixed seed.
///
/// Dates are synthetic consecutive weekdays starting 2000-01-03.
pub fn simulate_gbm(spec: &GbmSpec) -> Result<PriceSeries, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dt = 1.0 / spec.days_per_year as f64;
    let drift = (spec.mu - 0.5 * spec.sigma * spec.sigma) * dt;
    let step_sd = spec.sigma * dt.sqrt();

    let mut dates = Vec::with_capacity(spec.n_days);
    let mut values = Vec::with_capacity(spec.n_days);
    let mut date = NaiveDate::from_ymd_opt(2000, 1, 3).unwrap();
    let mut log_price = spec.s0.ln();
    dates.push(date);
    values.push(spec.s0);
    for _ in 1..spec.n_days {
        let z: f64 = StandardNormal.sample(&mut rng);
        log_price += drift + step_sd * z;
        date = next_weekday(date);
        dates.push(date);
        values.push(log_price.exp());
    }
    PriceSeries::new(dates, values)
}
