//! Three-layer implementation cost arithmetic: transaction, roll, management.
//!
//! Costs are applied as a uniform daily drag; this artifact does not model
//! discrete position changes, so per-trade costing is out of scope. Roll
//! drag is charged as gross leverage times the average roll bp per year.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::ReturnSeries;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("contract notional must be positive, got {0}")]
    NonPositiveNotional(f64),
    #[error("cost component {field} must be non-negative, got {value}")]
    NegativeComponent { field: &'static str, value: f64 },
    #[error("round-turn range must satisfy 0 <= lo <= hi, got [{lo}, {hi}]")]
    BadRoundTurnRange { lo: f64, hi: f64 },
    #[error("{field} must be non-negative, got {value}")]
    NegativeAssumption { field: &'static str, value: f64 },
}

/// Per-contract round-turn execution cost components, in currency units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxCostInputs {
    pub half_spread: f64,
    pub brokerage: f64,
    pub fees: f64,
    pub slippage_buffer: f64,
    pub contract_notional: f64,
}

impl TxCostInputs {
    fn validate(&self) -> Result<(), CostError> {
        for (field, value) in [
            ("half_spread", self.half_spread),
            ("brokerage", self.brokerage),
            ("fees", self.fees),
            ("slippage_buffer", self.slippage_buffer),
        ] {
            if !(value >= 0.0) {
                return Err(CostError::NegativeComponent { field, value });
            }
        }
        if !(self.contract_notional > 0.0) {
            return Err(CostError::NonPositiveNotional(self.contract_notional));
        }
        Ok(())
    }
}

/// Round-turn cost in basis points of notional:
/// `(half_spread + brokerage + fees + slippage) / notional * 1e4`.
pub fn tx_cost_bp(inputs: &TxCostInputs) -> Result<f64, CostError> {
    inputs.validate()?;
    let total =
        inputs.half_spread + inputs.brokerage + inputs.fees + inputs.slippage_buffer;
    Ok(total / inputs.contract_notional * 1e4)
}

/// Portfolio-level cost assumptions for the all-in annual drag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostAssumptions {
    /// Round-turns per year, [lo, hi].
    pub round_turns_per_year: (f64, f64),
    /// Average gross leverage, multiplies the roll drag.
    pub gross_leverage: f64,
    pub avg_roll_drag_bp: f64,
    pub mgmt_fee_bp: f64,
}

impl Default for CostAssumptions {
    fn default() -> Self {
        CostAssumptions {
            round_turns_per_year: (20.0, 35.0),
            gross_leverage: 4.0,
            avg_roll_drag_bp: 12.0,
            mgmt_fee_bp: 50.0,
        }
    }
}

impl CostAssumptions {
    pub fn validate(&self) -> Result<(), CostError> {
        let (lo, hi) = self.round_turns_per_year;
        if !(lo >= 0.0 && lo <= hi) {
            return Err(CostError::BadRoundTurnRange { lo, hi });
        }
        for (field, value) in [
            ("gross_leverage", self.gross_leverage),
            ("avg_roll_drag_bp", self.avg_roll_drag_bp),
            ("mgmt_fee_bp", self.mgmt_fee_bp),
        ] {
            if !(value >= 0.0) {
                return Err(CostError::NegativeAssumption { field, value });
            }
        }
        Ok(())
    }
}

/// All-in annual cost range in bp:
/// `round_turns * tx_bp + leverage * roll_bp + mgmt_bp` at both ends of the
/// round-turn range.
pub fn all_in_cost_bp(a: &CostAssumptions, tx_bp: f64) -> Result<(f64, f64), CostError> {
    a.validate()?;
    if !(tx_bp >= 0.0) {
        return Err(CostError::NegativeAssumption {
            field: "tx_bp",
            value: tx_bp,
        });
    }
    let fixed = a.gross_leverage * a.avg_roll_drag_bp + a.mgmt_fee_bp;
    Ok((
        a.round_turns_per_year.0 * tx_bp + fixed,
        a.round_turns_per_year.1 * tx_bp + fixed,
    ))
}

/// Net returns after a uniform daily drag of `annual_cost_bp / 1e4 / days_per_year`.
pub fn apply_costs(
    gross: &ReturnSeries,
    annual_cost_bp: f64,
    days_per_year: usize,
) -> ReturnSeries {
    let daily = annual_cost_bp / 1e4 / days_per_year as f64;
    ReturnSeries {
        dates: gross.dates.clone(),
        values: gross.values.iter().map(|r| r - daily).collect(),
    }
}
