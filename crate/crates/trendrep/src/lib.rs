//! Reconstruction of CTA-style futures returns from liquid-contract trend factors.
//!
//! The crate is organised around a small pipeline:
//!
//! 1. [`market_data`] loads (or simulates) contract price series and the
//!    futures universe configuration.
//! 2. [`factor_engine`] turns each price series into horizon-specific
//!    lookback-straddle trend scores and assembles the regressor panel.
//! 3. [`state_space`] decodes time-varying factor exposures from a benchmark
//!    return stream with a linear-Gaussian forward filter and backward
//!    smoother, and produces one-step-ahead replication returns.
//! 4. [`cost_model`] and [`strategy`] apply the three-layer implementation
//!    cost arithmetic and compute sleeve-level performance reports.
//! 5. [`analytics`] holds the closed-form Sharpe-blend optimum and the
//!    Cobb-Douglas / CES utility and Pareto-frontier apparatus.
//!
//! Per-market and per-path inner loops run on rayon when the default
//! `parallel` feature is enabled; disabling it falls back to sequential
//! iteration with identical results.

// validators use negated comparisons on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod cost_model;
pub mod factor_engine;
pub mod market_data;
pub mod state_space;
pub mod strategy;

pub(crate) mod parallel;

pub use market_data::{
    AssetClass, ContractSpec, GbmSpec, PriceSeries, ReturnSeries, Universe,
};
