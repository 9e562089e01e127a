//! Horizon-specific lookback-straddle trend scores and the regressor panel.
//!
//! An "n-day window" always means n price observations, hence n-1 log
//! returns; scores are only emitted once the full window exists. The trend
//! score for window n is
//!
//! ```text
//! T = Phi(ln(S/m) / (sigma sqrt(n))) - Phi(ln(M/S) / (sigma sqrt(n)))
//! ```
//!
//! with M/m the trailing n-day running max/min, sigma the non-demeaned
//! root-mean-square of the window's log returns and Phi the standard normal
//! CDF. T is bounded in [-1, 1], scale invariant and antisymmetric under
//! log-reflection of the price path.

use std::collections::{BTreeSet, HashMap, VecDeque};

use chrono::NaiveDate;
use libm::erfc;
use thiserror::Error;

use crate::market_data::{PriceSeries, ReturnSeries, Universe};
use crate::parallel::par_map;

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("window must be >= 2, got {0}")]
    WindowTooSmall(usize),
    #[error("series length {len} shorter than window {window}")]
    SeriesTooShort { len: usize, window: usize },
    #[error("empty horizon set")]
    EmptyHorizonSet,
    #[error("zero volatility with distinct extrema in window ending at {0}")]
    DegenerateVolatility(NaiveDate),
    #[error("missing prices for contract {0}")]
    MissingPrices(String),
    #[error(
        "insufficient common history: {available} shared dates, need at least {required}"
    )]
    InsufficientHistory { available: usize, required: usize },
}

/// Standard normal CDF via the complementary error function.
///
/// Absolute error is well below 1e-12 over the relevant range.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// A set of lookback windows, in days.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HorizonSet {
    windows: Vec<usize>,
}

impl HorizonSet {
    pub fn new(windows: Vec<usize>) -> Result<Self, FactorError> {
        if windows.is_empty() {
            return Err(FactorError::EmptyHorizonSet);
        }
        if let Some(&w) = windows.iter().find(|&&w| w < 2) {
            return Err(FactorError::WindowTooSmall(w));
        }
        Ok(HorizonSet { windows })
    }

    /// Short-term bucket: 10, 20, 40 and 60 days.
    pub fn short_term_default() -> Self {
        HorizonSet {
            windows: vec![10, 20, 40, 60],
        }
    }

    /// Long-term bucket: 500 days.
    pub fn long_term_default() -> Self {
        HorizonSet { windows: vec![500] }
    }

    pub fn windows(&self) -> &[usize] {
        &self.windows
    }

    pub fn max_window(&self) -> usize {
        *self.windows.iter().max().unwrap()
    }
}

/// Trend scores for one window, defined from the first date with a full
/// lookback.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendScoreSeries {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
    pub window: usize,
}

/// Trailing n-day running max and min at every date with a full window.
///
/// Monotonic-deque sweep, amortized O(1) per step. Output has length
/// `len - n + 1`, aligned to the last `len - n + 1` dates.
pub fn running_extrema(
    p: &PriceSeries,
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>), FactorError> {
    check_window(p, n)?;
    let values = p.values();
    let mut max_out = Vec::with_capacity(values.len() - n + 1);
    let mut min_out = Vec::with_capacity(values.len() - n + 1);
    // deques hold indices; max_dq decreasing by value, min_dq increasing
    let mut max_dq: VecDeque<usize> = VecDeque::new();
    let mut min_dq: VecDeque<usize> = VecDeque::new();
    for (t, &v) in values.iter().enumerate() {
        while max_dq.back().is_some_and(|&i| values[i] <= v) {
            max_dq.pop_back();
        }
        max_dq.push_back(t);
        while min_dq.back().is_some_and(|&i| values[i] >= v) {
            min_dq.pop_back();
        }
        min_dq.push_back(t);
        if t + 1 >= n {
            let lo = t + 1 - n;
            if *max_dq.front().unwrap() < lo {
                max_dq.pop_front();
            }
            if *min_dq.front().unwrap() < lo {
                min_dq.pop_front();
            }
            max_out.push(values[*max_dq.front().unwrap()]);
            min_out.push(values[*min_dq.front().unwrap()]);
        }
    }
    Ok((max_out, min_out))
}

/// Non-demeaned rolling volatility: sqrt of the mean of squared log returns
/// over the n-1 returns inside each n-observation window.
pub fn rolling_volatility(p: &PriceSeries, n: usize) -> Result<Vec<f64>, FactorError> {
    check_window(p, n)?;
    let values = p.values();
    let sq: Vec<f64> = values
        .windows(2)
        .map(|w| {
            let r = (w[1] / w[0]).ln();
            r * r
        })
        .collect();
    let m = n - 1; // returns per window
    let mut out = Vec::with_capacity(values.len() - n + 1);
    for t in (n - 1)..values.len() {
        // returns with indices t-n+1 .. t-1 inclusive
        let sum: f64 = sq[t + 1 - n..t].iter().sum();
        out.push((sum / m as f64).sqrt());
    }
    Ok(out)
}

/// Lookback-straddle trend score for one window.
pub fn trend_score(p: &PriceSeries, n: usize) -> Result<TrendScoreSeries, FactorError> {
    let (max_s, min_s) = running_extrema(p, n)?;
    let vol = rolling_volatility(p, n)?;
    let offset = n - 1;
    let dates = p.dates()[offset..].to_vec();
    let sqrt_n = (n as f64).sqrt();
    let mut values = Vec::with_capacity(dates.len());
    for (i, ((&m_max, &m_min), &sigma)) in max_s.iter().zip(&min_s).zip(&vol).enumerate() {
        let s = p.values()[offset + i];
        let v = if sigma == 0.0 {
            if m_max != m_min {
                return Err(FactorError::DegenerateVolatility(dates[i]));
            }
            0.0
        } else {
            let z_up = (s / m_min).ln() / (sigma * sqrt_n);
            let z_down = (m_max / s).ln() / (sigma * sqrt_n);
            normal_cdf(z_up) - normal_cdf(z_down)
        };
        values.push(v);
    }
    Ok(TrendScoreSeries {
        dates,
        values,
        window: n,
    })
}

/// Equal-weight mean of per-window trend scores, emitted from the first date
/// where the longest window is full.
pub fn composite_score(p: &PriceSeries, h: &HorizonSet) -> Result<TrendScoreSeries, FactorError> {
    let max_w = h.max_window();
    let per_window: Vec<TrendScoreSeries> = h
        .windows()
        .iter()
        .map(|&n| trend_score(p, n))
        .collect::<Result<_, _>>()?;
    let dates = p.dates()[max_w - 1..].to_vec();
    let count = per_window.len() as f64;
    let values: Vec<f64> = (0..dates.len())
        .map(|i| {
            per_window
                .iter()
                .map(|ts| {
                    // each series starts at its own window-1 offset
                    let skip = max_w - ts.window;
                    ts.values[skip + i]
                })
                .sum::<f64>()
                / count
        })
        .collect();
    Ok(TrendScoreSeries {
        dates,
        values,
        window: max_w,
    })
}

/// Rectangular date x market panel of ST score, LT score and raw return.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPanel {
    dates: Vec<NaiveDate>,
    markets: Vec<String>,
    // row-major: index t * markets.len() + j
    st: Vec<f64>,
    lt: Vec<f64>,
    ret: Vec<f64>,
}

/// Which regressor columns of the panel feed the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactorKind {
    St,
    Lt,
    Mkt,
}

impl FactorKind {
    pub const ALL: [FactorKind; 3] = [FactorKind::St, FactorKind::Lt, FactorKind::Mkt];

    pub fn label(self) -> &'static str {
        match self {
            FactorKind::St => "ST",
            FactorKind::Lt => "LT",
            FactorKind::Mkt => "MKT",
        }
    }
}

impl FactorPanel {
    /// Assemble a panel from precomputed row-major columns. Intended for
    /// synthetic data; `build_panel` is the price-driven path.
    pub fn from_parts(
        dates: Vec<NaiveDate>,
        markets: Vec<String>,
        st: Vec<f64>,
        lt: Vec<f64>,
        ret: Vec<f64>,
    ) -> Result<Self, FactorError> {
        let cells = dates.len() * markets.len();
        if st.len() != cells || lt.len() != cells || ret.len() != cells {
            return Err(FactorError::InsufficientHistory {
                available: st.len().min(lt.len()).min(ret.len()),
                required: cells,
            });
        }
        Ok(FactorPanel {
            dates,
            markets,
            st,
            lt,
            ret,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn markets(&self) -> &[String] {
        &self.markets
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn st(&self, t: usize, market: usize) -> f64 {
        self.st[t * self.markets.len() + market]
    }

    pub fn lt(&self, t: usize, market: usize) -> f64 {
        self.lt[t * self.markets.len() + market]
    }

    pub fn mkt_return(&self, t: usize, market: usize) -> f64 {
        self.ret[t * self.markets.len() + market]
    }

    pub fn value(&self, t: usize, market: usize, kind: FactorKind) -> f64 {
        match kind {
            FactorKind::St => self.st(t, market),
            FactorKind::Lt => self.lt(t, market),
            FactorKind::Mkt => self.mkt_return(t, market),
        }
    }

    /// Regressor labels for the given factor subset, market-major with
    /// factor kinds in ST, LT, MKT order within each market.
    pub fn regressor_labels(&self, kinds: &[FactorKind]) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.markets.len() * kinds.len());
        for m in &self.markets {
            for k in FactorKind::ALL.iter().filter(|k| kinds.contains(k)) {
                labels.push(format!("{m}.{}", k.label()));
            }
        }
        labels
    }

    /// Flattened regressor row at date index `t`, same ordering as
    /// [`FactorPanel::regressor_labels`].
    pub fn regressor_row(&self, t: usize, kinds: &[FactorKind]) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.markets.len() * kinds.len());
        for j in 0..self.markets.len() {
            for k in FactorKind::ALL.iter().filter(|k| kinds.contains(k)) {
                row.push(self.value(t, j, *k));
            }
        }
        row
    }

    /// Panel export: `date,market,st_score,lt_score,mkt_return`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,market,st_score,lt_score,mkt_return\n");
        for t in 0..self.dates.len() {
            for (j, market) in self.markets.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{:.12e},{:.12e},{:.12e}\n",
                    self.dates[t],
                    market,
                    self.st(t, j),
                    self.lt(t, j),
                    self.mkt_return(t, j)
                ));
            }
        }
        out
    }
}

/// Build the regressor panel on the date intersection of all markets.
///
/// Each market's prices are restricted to the common dates first, so windows
/// count common trading days. The panel starts where the longest window of
/// `st` and `lt` is full. Per-market factor computation fans out to the
/// worker pool.
pub fn build_panel(
    universe: &Universe,
    prices: &HashMap<String, PriceSeries>,
    st: &HorizonSet,
    lt: &HorizonSet,
) -> Result<FactorPanel, FactorError> {
    let markets = universe.roots();
    for root in &markets {
        if !prices.contains_key(root) {
            return Err(FactorError::MissingPrices(root.clone()));
        }
    }
    let mut common: Option<BTreeSet<NaiveDate>> = None;
    for root in &markets {
        let dates: BTreeSet<NaiveDate> = prices[root].dates().iter().copied().collect();
        common = Some(match common {
            None => dates,
            Some(acc) => acc.intersection(&dates).copied().collect(),
        });
    }
    let common: Vec<NaiveDate> = common.unwrap().into_iter().collect();
    let max_w = st.max_window().max(lt.max_window());
    if common.len() < max_w + 1 {
        return Err(FactorError::InsufficientHistory {
            available: common.len(),
            required: max_w + 1,
        });
    }

    struct MarketColumns {
        st: Vec<f64>,
        lt: Vec<f64>,
        ret: Vec<f64>,
    }

    let inputs: Vec<(String, PriceSeries)> = markets
        .iter()
        .map(|root| {
            let restricted = prices[root]
                .restrict(&common)
                .expect("intersection dates present in every series");
            (root.clone(), restricted)
        })
        .collect();
    let start = max_w - 1;
    let columns: Vec<Result<MarketColumns, FactorError>> = par_map(inputs, |(_, series)| {
        let st_scores = composite_score(&series, st)?;
        let lt_scores = composite_score(&series, lt)?;
        let rets = crate::market_data::to_returns(&series);
        let take = common.len() - start;
        Ok(MarketColumns {
            st: st_scores.values[st_scores.values.len() - take..].to_vec(),
            lt: lt_scores.values[lt_scores.values.len() - take..].to_vec(),
            ret: rets.values[rets.values.len() - take..].to_vec(),
        })
    });
    let columns: Vec<MarketColumns> = columns.into_iter().collect::<Result<_, _>>()?;

    let dates = common[start..].to_vec();
    let n_dates = dates.len();
    let n_markets = markets.len();
    let mut panel = FactorPanel {
        dates,
        markets,
        st: vec![0.0; n_dates * n_markets],
        lt: vec![0.0; n_dates * n_markets],
        ret: vec![0.0; n_dates * n_markets],
    };
    for (j, col) in columns.iter().enumerate() {
        for t in 0..n_dates {
            panel.st[t * n_markets + j] = col.st[t];
            panel.lt[t * n_markets + j] = col.lt[t];
            panel.ret[t * n_markets + j] = col.ret[t];
        }
    }
    Ok(panel)
}

fn check_window(p: &PriceSeries, n: usize) -> Result<(), FactorError> {
    if n < 2 {
        return Err(FactorError::WindowTooSmall(n));
    }
    if p.len() < n {
        return Err(FactorError::SeriesTooShort {
            len: p.len(),
            window: n,
        });
    }
    Ok(())
}

/// Synthetic benchmark return series from a panel: `y_t = sum of
/// beta[j][kind] * x` plus optional noise, used by tests and examples.
pub fn panel_combination(
    panel: &FactorPanel,
    kinds: &[FactorKind],
    betas: &[f64],
    noise: &[f64],
) -> ReturnSeries {
    let values: Vec<f64> = (0..panel.n_dates())
        .map(|t| {
            let x = panel.regressor_row(t, kinds);
            let mut y: f64 = x.iter().zip(betas).map(|(a, b)| a * b).sum();
            if !noise.is_empty() {
                y += noise[t];
            }
            y
        })
        .collect();
    ReturnSeries::new(panel.dates().to_vec(), values).expect("panel dates are valid")
}
