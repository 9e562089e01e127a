//! Closed-form Sharpe-blend theory and the utility / Pareto apparatus.
//!
//! The blend formulas assume unit-variance factors (covariance matrix with
//! unit diagonal and off-diagonal `rho`); callers standardize empirical
//! factor returns before invoking them. The utility side works in the
//! (benchmark correlation, Return/MaxDD) plane with a Cobb-Douglas scale
//! constant of 1.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("correlation must satisfy |rho| < 1, got {0}")]
    CorrelationOutOfRange(f64),
    #[error("mu_st + mu_lt must be non-zero")]
    DegenerateDenominator,
    #[error("coordinates must be positive, got ({0}, {1})")]
    NonPositiveCoordinate(f64, f64),
    #[error("alpha must lie in (0, 1), got {0}")]
    AlphaOutOfRange(f64),
    #[error("ces rho must be non-zero; use cobb_douglas for the rho -> 0 limit")]
    CesRhoZero,
    #[error("indifference alpha undefined: points coincide in a coordinate")]
    CoincidentPoints,
}

/// Expected per-period returns of the two unit-variance factors and their
/// correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendInputs {
    pub mu_st: f64,
    pub mu_lt: f64,
    pub rho: f64,
}

impl BlendInputs {
    pub fn new(mu_st: f64, mu_lt: f64, rho: f64) -> Result<Self, AnalyticsError> {
        if !(rho.abs() < 1.0) {
            return Err(AnalyticsError::CorrelationOutOfRange(rho));
        }
        Ok(BlendInputs { mu_st, mu_lt, rho })
    }
}

/// `Var(P) = 1 + 2 (rho - 1) w (1 - w)` for the unit-budget two-factor blend.
pub fn blend_variance(w_st: f64, rho: f64) -> f64 {
    1.0 + 2.0 * (rho - 1.0) * w_st * (1.0 - w_st)
}

/// Absolute Sharpe ratio of the blend at weight `w_st`.
pub fn blend_sharpe(w_st: f64, inputs: &BlendInputs) -> f64 {
    let mean = w_st * inputs.mu_st + (1.0 - w_st) * inputs.mu_lt;
    mean / blend_variance(w_st, inputs.rho).sqrt()
}

/// Unconstrained Sharpe-maximizing weight split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalWeight {
    pub w_st: f64,
    pub w_lt: f64,
    /// False when the optimum implies a short position in one factor.
    pub in_unit_interval: bool,
}

/// Closed-form optimum `w* = (mu_st - rho mu_lt) / ((mu_st + mu_lt)(1 - rho))`.
///
/// Out-of-[0,1] optima are returned as-is with `in_unit_interval` false;
/// clipping is caller policy.
pub fn optimal_weight(inputs: &BlendInputs) -> Result<OptimalWeight, AnalyticsError> {
    if !(inputs.rho.abs() < 1.0) {
        return Err(AnalyticsError::CorrelationOutOfRange(inputs.rho));
    }
    let denom = (inputs.mu_st + inputs.mu_lt) * (1.0 - inputs.rho);
    if denom == 0.0 {
        return Err(AnalyticsError::DegenerateDenominator);
    }
    let w_st = (inputs.mu_st - inputs.rho * inputs.mu_lt) / denom;
    Ok(OptimalWeight {
        w_st,
        w_lt: 1.0 - w_st,
        in_unit_interval: (0.0..=1.0).contains(&w_st),
    })
}

/// Strategy coordinates in the (correlation, Return/MaxDD) plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityPoint {
    /// Correlation to the benchmark, in (0, 1].
    pub rho_corr: f64,
    /// Return/MaxDD ratio, positive.
    pub y: f64,
}

impl UtilityPoint {
    pub fn new(rho_corr: f64, y: f64) -> Result<Self, AnalyticsError> {
        if !(rho_corr > 0.0) || !(y > 0.0) {
            return Err(AnalyticsError::NonPositiveCoordinate(rho_corr, y));
        }
        Ok(UtilityPoint { rho_corr, y })
    }
}

fn check_alpha(alpha: f64) -> Result<(), AnalyticsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(AnalyticsError::AlphaOutOfRange(alpha));
    }
    Ok(())
}

/// `U = rho^alpha * y^(1-alpha)`.
pub fn cobb_douglas(p: &UtilityPoint, alpha: f64) -> Result<f64, AnalyticsError> {
    check_alpha(alpha)?;
    Ok(p.rho_corr.powf(alpha) * p.y.powf(1.0 - alpha))
}

/// `U = (alpha x1^rho + (1-alpha) x2^rho)^(1/rho)`; the `rho -> 0` limit is
/// Cobb-Douglas and must be requested via [`cobb_douglas`].
pub fn ces_utility(x1: f64, x2: f64, alpha: f64, rho_ces: f64) -> Result<f64, AnalyticsError> {
    check_alpha(alpha)?;
    if !(x1 > 0.0) || !(x2 > 0.0) {
        return Err(AnalyticsError::NonPositiveCoordinate(x1, x2));
    }
    if rho_ces == 0.0 {
        return Err(AnalyticsError::CesRhoZero);
    }
    Ok((alpha * x1.powf(rho_ces) + (1.0 - alpha) * x2.powf(rho_ces)).powf(1.0 / rho_ces))
}

/// Level set of the Cobb-Douglas utility:
/// `y = U^(1/(1-alpha)) * rho^(-alpha/(1-alpha))` at each grid point.
pub fn iso_utility_curve(
    utility: f64,
    alpha: f64,
    rho_grid: &[f64],
) -> Result<Vec<(f64, f64)>, AnalyticsError> {
    check_alpha(alpha)?;
    if !(utility > 0.0) {
        return Err(AnalyticsError::NonPositiveCoordinate(utility, utility));
    }
    let exp_u = 1.0 / (1.0 - alpha);
    let exp_rho = -alpha / (1.0 - alpha);
    Ok(rho_grid
        .iter()
        .map(|&rho| (rho, utility.powf(exp_u) * rho.powf(exp_rho)))
        .collect())
}

/// The unique Cobb-Douglas exponent making two points indifferent:
/// `alpha = ln(y2/y1) / (ln(y2/y1) + ln(rho1/rho2))`, with the shared
/// utility level evaluated at `p1`.
pub fn indifference_alpha(
    p1: &UtilityPoint,
    p2: &UtilityPoint,
) -> Result<(f64, f64), AnalyticsError> {
    let ln_y = (p2.y / p1.y).ln();
    let ln_rho = (p1.rho_corr / p2.rho_corr).ln();
    let denom = ln_y + ln_rho;
    if p1.y == p2.y || p1.rho_corr == p2.rho_corr || denom == 0.0 {
        return Err(AnalyticsError::CoincidentPoints);
    }
    let alpha = ln_y / denom;
    check_alpha(alpha)?;
    let u = cobb_douglas(p1, alpha)?;
    Ok((alpha, u))
}

/// Indices of points not dominated in the (>=, >=, at least one strict)
/// partial order on (rho_corr, y).
pub fn pareto_frontier(points: &[UtilityPoint]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            !points.iter().enumerate().any(|(j, q)| {
                j != i
                    && q.rho_corr >= points[i].rho_corr
                    && q.y >= points[i].y
                    && (q.rho_corr > points[i].rho_corr || q.y > points[i].y)
            })
        })
        .collect()
}
