//! Linear-Gaussian random-walk regression filter: forward predict/correct,
//! backward smoothing, exposure and NAV-weight decoding, and one-step
//! replication.
//!
//! The state is the vector of regression coefficients; the transition is a
//! Gaussian random walk with innovation covariance `Q` (diagonal
//! `sigma_beta^2 I`, or a block constant-correlation structure across a
//! grouping of the regressors). Observations are scalar, so the correction
//! step is a rank-1 update costing O(K^2) per day. The covariance update
//! uses the Joseph form and explicit symmetrization.

use std::collections::HashMap;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factor_engine::{FactorKind, FactorPanel};
use crate::market_data::{PriceSeries, ReturnSeries};
use crate::parallel::par_map;

const RIDGE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum StateSpaceError {
    #[error("need at least one observation")]
    NoObservations,
    #[error("regressor dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("non-finite value in observation at {0}")]
    NonFinite(NaiveDate),
    #[error("innovation variance {0} <= 0: broken model")]
    NonPositiveInnovationVariance(f64),
    #[error("{field} must be positive, got {value}")]
    NonPositiveParameter { field: &'static str, value: f64 },
    #[error("state covariance prior must be symmetric positive semidefinite")]
    BadStateCov,
    #[error("dates misaligned: {0}")]
    Misaligned(String),
    #[error("NAV must be positive")]
    NonPositiveNav,
    #[error("filtered fields required before smoothing")]
    NotFiltered,
    #[error("group assignment length {got} does not match {expected} regressors")]
    BadGrouping { got: usize, expected: usize },
}

/// Hyperparameters and priors of the random-walk regression filter.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub regressor_labels: Vec<String>,
    pub sigma_beta: f64,
    pub sigma_eps: f64,
    /// State innovation covariance Q (already scaled by sigma_beta^2).
    pub state_cov_prior: DMatrix<f64>,
    pub beta0_mean: DVector<f64>,
    pub beta0_cov: DMatrix<f64>,
}

impl StateSpaceModel {
    /// Diagonal prior: `Q = sigma_beta^2 I`, `beta0 ~ N(0, I)`.
    pub fn diagonal(
        regressor_labels: Vec<String>,
        sigma_beta: f64,
        sigma_eps: f64,
    ) -> Result<Self, StateSpaceError> {
        let k = regressor_labels.len();
        Self::with_state_cov(
            regressor_labels,
            sigma_beta,
            sigma_eps,
            DMatrix::identity(k, k) * sigma_beta * sigma_beta,
            DVector::zeros(k),
            DMatrix::identity(k, k),
        )
    }

    /// Constant correlation `rho_within` between regressors sharing a group
    /// id, zero across groups; diagonal variance `sigma_beta^2`.
    pub fn block_correlated(
        regressor_labels: Vec<String>,
        groups: &[usize],
        rho_within: f64,
        sigma_beta: f64,
        sigma_eps: f64,
    ) -> Result<Self, StateSpaceError> {
        let k = regressor_labels.len();
        if groups.len() != k {
            return Err(StateSpaceError::BadGrouping {
                got: groups.len(),
                expected: k,
            });
        }
        if !(rho_within.abs() < 1.0) {
            return Err(StateSpaceError::BadStateCov);
        }
        let v = sigma_beta * sigma_beta;
        let mut q = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                q[(i, j)] = if i == j {
                    v
                } else if groups[i] == groups[j] {
                    rho_within * v
                } else {
                    0.0
                };
            }
        }
        Self::with_state_cov(
            regressor_labels,
            sigma_beta,
            sigma_eps,
            q,
            DVector::zeros(k),
            DMatrix::identity(k, k),
        )
    }

    pub fn with_state_cov(
        regressor_labels: Vec<String>,
        sigma_beta: f64,
        sigma_eps: f64,
        state_cov_prior: DMatrix<f64>,
        beta0_mean: DVector<f64>,
        beta0_cov: DMatrix<f64>,
    ) -> Result<Self, StateSpaceError> {
        if !(sigma_beta > 0.0) {
            return Err(StateSpaceError::NonPositiveParameter {
                field: "sigma_beta",
                value: sigma_beta,
            });
        }
        if !(sigma_eps > 0.0) {
            return Err(StateSpaceError::NonPositiveParameter {
                field: "sigma_eps",
                value: sigma_eps,
            });
        }
        let k = regressor_labels.len();
        if state_cov_prior.nrows() != k
            || state_cov_prior.ncols() != k
            || beta0_mean.len() != k
            || beta0_cov.nrows() != k
            || beta0_cov.ncols() != k
        {
            return Err(StateSpaceError::DimensionMismatch {
                got: state_cov_prior.nrows(),
                expected: k,
            });
        }
        if !is_symmetric_psd(&state_cov_prior) || !is_symmetric_psd(&beta0_cov) {
            return Err(StateSpaceError::BadStateCov);
        }
        Ok(StateSpaceModel {
            regressor_labels,
            sigma_beta,
            sigma_eps,
            state_cov_prior,
            beta0_mean,
            beta0_cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.regressor_labels.len()
    }
}

fn is_symmetric_psd(m: &DMatrix<f64>) -> bool {
    let k = m.nrows();
    for i in 0..k {
        for j in (i + 1)..k {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * (1.0 + m[(i, i)].abs()) {
                return false;
            }
        }
    }
    let sym = (m + m.transpose()) * 0.5;
    let min_ev = sym.symmetric_eigenvalues().min();
    min_ev >= -1e-10 * (1.0 + sym.diagonal().amax())
}

/// One scalar observation with its regressor row.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub date: NaiveDate,
    pub y: f64,
    pub x: DVector<f64>,
}

/// Filtered (and optionally smoothed) posterior over the coefficient path.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorPath {
    pub dates: Vec<NaiveDate>,
    pub filtered_mean: Vec<DVector<f64>>,
    pub filtered_cov: Vec<DMatrix<f64>>,
    pub smoothed_mean: Option<Vec<DVector<f64>>>,
    pub smoothed_cov: Option<Vec<DMatrix<f64>>>,
    /// Cumulative one-step-ahead predictive log-likelihood.
    pub loglik: f64,
}

impl PosteriorPath {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Export: `date,regressor,filtered_mean,filtered_var,smoothed_mean,smoothed_var`.
    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut out =
            String::from("date,regressor,filtered_mean,filtered_var,smoothed_mean,smoothed_var\n");
        for t in 0..self.len() {
            for (k, label) in labels.iter().enumerate() {
                let (sm, sv) = match (&self.smoothed_mean, &self.smoothed_cov) {
                    (Some(means), Some(covs)) => (means[t][k], covs[t][(k, k)]),
                    _ => (f64::NAN, f64::NAN),
                };
                out.push_str(&format!(
                    "{},{},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                    self.dates[t],
                    label,
                    self.filtered_mean[t][k],
                    self.filtered_cov[t][(k, k)],
                    sm,
                    sv
                ));
            }
        }
        out
    }
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let k = p.nrows();
    for i in 0..k {
        for j in (i + 1)..k {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}

/// Forward predict/correct recursion over scalar observations.
pub fn filter_forward(
    model: &StateSpaceModel,
    obs: &[Observation],
) -> Result<PosteriorPath, StateSpaceError> {
    if obs.is_empty() {
        return Err(StateSpaceError::NoObservations);
    }
    let k = model.dim();
    let obs_var = model.sigma_eps * model.sigma_eps;

    let mut mean = model.beta0_mean.clone();
    let mut cov = model.beta0_cov.clone();
    let mut dates = Vec::with_capacity(obs.len());
    let mut filtered_mean = Vec::with_capacity(obs.len());
    let mut filtered_cov = Vec::with_capacity(obs.len());
    let mut loglik = 0.0;

    for o in obs {
        if o.x.len() != k {
            return Err(StateSpaceError::DimensionMismatch {
                got: o.x.len(),
                expected: k,
            });
        }
        if !o.y.is_finite() || o.x.iter().any(|v| !v.is_finite()) {
            return Err(StateSpaceError::NonFinite(o.date));
        }
        // predict: mean unchanged, cov grows by Q
        cov += &model.state_cov_prior;

        // correct: scalar observation, rank-1 Joseph update
        let px = &cov * &o.x; // O(K^2)
        let innovation_var = o.x.dot(&px) + obs_var;
        if !(innovation_var > 0.0) {
            return Err(StateSpaceError::NonPositiveInnovationVariance(
                innovation_var,
            ));
        }
        let innovation = o.y - o.x.dot(&mean);
        let gain = &px / innovation_var;
        mean += &gain * innovation;
        // (I - g x') P (I - g x')' + obs_var g g'
        let a = &cov - &gain * px.transpose(); // (I - g x') P
        let ax = &a * &o.x;
        cov = &a - ax * gain.transpose() + (&gain * gain.transpose()) * obs_var;
        symmetrize(&mut cov);

        loglik += -0.5
            * ((2.0 * std::f64::consts::PI * innovation_var).ln()
                + innovation * innovation / innovation_var);

        dates.push(o.date);
        filtered_mean.push(mean.clone());
        filtered_cov.push(cov.clone());
    }

    Ok(PosteriorPath {
        dates,
        filtered_mean,
        filtered_cov,
        smoothed_mean: None,
        smoothed_cov: None,
        loglik,
    })
}

/// Rauch-style backward pass for the random-walk transition.
///
/// Gain `G_t = P_t (P_t + Q)^{-1}`; a singular predicted covariance is
/// regularized with a small ridge before inversion.
pub fn smooth_backward(
    model: &StateSpaceModel,
    path: &PosteriorPath,
) -> Result<PosteriorPath, StateSpaceError> {
    if path.is_empty() {
        return Err(StateSpaceError::NotFiltered);
    }
    let n = path.len();
    let k = model.dim();
    let mut smoothed_mean = path.filtered_mean.clone();
    let mut smoothed_cov = path.filtered_cov.clone();

    for t in (0..n - 1).rev() {
        let pf = &path.filtered_cov[t];
        let mut predicted = pf + &model.state_cov_prior;
        symmetrize(&mut predicted);
        let inv = match predicted.clone().cholesky() {
            Some(chol) => chol.inverse(),
            None => {
                let ridged = &predicted + DMatrix::identity(k, k) * RIDGE;
                ridged
                    .cholesky()
                    .ok_or(StateSpaceError::BadStateCov)?
                    .inverse()
            }
        };
        let gain = pf * inv;
        smoothed_mean[t] = &path.filtered_mean[t]
            + &gain * (&smoothed_mean[t + 1] - &path.filtered_mean[t]);
        let mut cov =
            pf + &gain * (&smoothed_cov[t + 1] - predicted) * gain.transpose();
        symmetrize(&mut cov);
        smoothed_cov[t] = cov;
    }

    Ok(PosteriorPath {
        dates: path.dates.clone(),
        filtered_mean: path.filtered_mean.clone(),
        filtered_cov: path.filtered_cov.clone(),
        smoothed_mean: Some(smoothed_mean),
        smoothed_cov: Some(smoothed_cov),
        loglik: path.loglik,
    })
}

/// Build scalar observations from a panel regressor subset and a benchmark
/// return series. Dates must match one-to-one.
pub fn panel_observations(
    panel: &FactorPanel,
    kinds: &[FactorKind],
    benchmark: &ReturnSeries,
) -> Result<Vec<Observation>, StateSpaceError> {
    if panel.dates() != &benchmark.dates[..] {
        // allow the benchmark to cover a superset; align by intersection
        let by_date: HashMap<NaiveDate, f64> = benchmark
            .dates
            .iter()
            .copied()
            .zip(benchmark.values.iter().copied())
            .collect();
        let mut obs = Vec::new();
        for (t, date) in panel.dates().iter().enumerate() {
            match by_date.get(date) {
                Some(&y) => obs.push(Observation {
                    date: *date,
                    y,
                    x: DVector::from_vec(panel.regressor_row(t, kinds)),
                }),
                None => {
                    return Err(StateSpaceError::Misaligned(format!(
                        "benchmark missing date {date}"
                    )))
                }
            }
        }
        return Ok(obs);
    }
    Ok((0..panel.n_dates())
        .map(|t| Observation {
            date: panel.dates()[t],
            y: benchmark.values[t],
            x: DVector::from_vec(panel.regressor_row(t, kinds)),
        })
        .collect())
}

/// Run the full filter + smoother over the flattened three-factor panel.
///
/// Regressor ordering is market-major with factor kinds ST, LT, MKT within
/// each market, matching `FactorPanel::regressor_labels`.
pub fn decode_exposures(
    model: &StateSpaceModel,
    panel: &FactorPanel,
    benchmark: &ReturnSeries,
) -> Result<PosteriorPath, StateSpaceError> {
    let obs = panel_observations(panel, &FactorKind::ALL, benchmark)?;
    let path = filter_forward(model, &obs)?;
    smooth_backward(model, &path)
}

/// Decode portfolio weights from NAV dynamics:
/// `y_t = NAV_t / NAV_{t-1} - 1` regressed on contemporaneous asset-class
/// returns, with the (lagged) weights as the random-walk state.
pub fn decode_nav_weights(
    model: &StateSpaceModel,
    asset_returns: &[(String, ReturnSeries)],
    nav: &PriceSeries,
) -> Result<PosteriorPath, StateSpaceError> {
    let obs = nav_observations(asset_returns, nav)?;
    let path = filter_forward(model, &obs)?;
    smooth_backward(model, &path)
}

/// Observations for NAV-weight decoding; exposed so replication can reuse
/// the exact same regressor rows.
pub fn nav_observations(
    asset_returns: &[(String, ReturnSeries)],
    nav: &PriceSeries,
) -> Result<Vec<Observation>, StateSpaceError> {
    let nav_rets = crate::market_data::to_returns(nav);
    let mut maps: Vec<HashMap<NaiveDate, f64>> = Vec::with_capacity(asset_returns.len());
    for (_, r) in asset_returns {
        maps.push(
            r.dates
                .iter()
                .copied()
                .zip(r.values.iter().copied())
                .collect(),
        );
    }
    let mut obs = Vec::with_capacity(nav_rets.len());
    for (date, y) in nav_rets.dates.iter().zip(&nav_rets.values) {
        let mut x = Vec::with_capacity(asset_returns.len());
        for (j, map) in maps.iter().enumerate() {
            match map.get(date) {
                Some(&v) => x.push(v),
                None => {
                    return Err(StateSpaceError::Misaligned(format!(
                        "asset class {} missing date {date}",
                        asset_returns[j].0
                    )))
                }
            }
        }
        obs.push(Observation {
            date: *date,
            y: *y,
            x: DVector::from_vec(x),
        });
    }
    if obs.is_empty() {
        return Err(StateSpaceError::NoObservations);
    }
    Ok(obs)
}

/// Out-of-sample one-step replication: `r_hat_t = x_t . filtered_mean_{t-1}`,
/// with the prior mean standing in at the first date.
pub fn replicate_returns(
    model: &StateSpaceModel,
    path: &PosteriorPath,
    obs: &[Observation],
) -> Result<ReturnSeries, StateSpaceError> {
    if obs.len() != path.len() {
        return Err(StateSpaceError::Misaligned(format!(
            "{} observations vs {} posterior dates",
            obs.len(),
            path.len()
        )));
    }
    let mut values = Vec::with_capacity(obs.len());
    for (t, o) in obs.iter().enumerate() {
        let mean = if t == 0 {
            &model.beta0_mean
        } else {
            &path.filtered_mean[t - 1]
        };
        values.push(o.x.dot(mean));
    }
    ReturnSeries::new(path.dates.clone(), values)
        .map_err(|e| StateSpaceError::Misaligned(e.to_string()))
}

/// Filter configuration as read from the run config file. Hyperparameters
/// the data should pick are left optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// State innovation std; default 0.01 / sqrt(252).
    pub sigma_beta: f64,
    /// Observation noise std; when absent, estimated as
    /// `noise_fraction * std(y)` over the burn-in window.
    pub sigma_eps: Option<f64>,
    pub noise_fraction: f64,
    pub burn_in_days: usize,
    /// Within-group prior correlation of state innovations; `None` keeps the
    /// diagonal prior.
    pub rho_within_class: Option<f64>,
    /// Log-spaced maximum-likelihood grid search over (sigma_beta, sigma_eps).
    pub grid_search: bool,
    pub grid_points: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            sigma_beta: 0.01 / 252f64.sqrt(),
            sigma_eps: None,
            noise_fraction: 0.2,
            burn_in_days: 60,
            rho_within_class: None,
            grid_search: false,
            grid_points: 5,
        }
    }
}

impl FilterConfig {
    /// Resolve `sigma_eps` against the observed benchmark returns.
    pub fn resolve_sigma_eps(&self, y: &[f64]) -> f64 {
        if let Some(s) = self.sigma_eps {
            return s;
        }
        let burn = y.len().min(self.burn_in_days.max(2));
        let slice = &y[..burn];
        let mean = slice.iter().sum::<f64>() / burn as f64;
        let var = slice.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (burn as f64 - 1.0);
        let sd = var.sqrt();
        (self.noise_fraction * sd).max(1e-8)
    }

    /// Build the model for a regressor set, optionally with a block
    /// correlation prior over `groups`.
    pub fn build_model(
        &self,
        labels: Vec<String>,
        groups: Option<&[usize]>,
        y: &[f64],
    ) -> Result<StateSpaceModel, StateSpaceError> {
        let sigma_eps = self.resolve_sigma_eps(y);
        match (self.rho_within_class, groups) {
            (Some(rho), Some(groups)) => StateSpaceModel::block_correlated(
                labels,
                groups,
                rho,
                self.sigma_beta,
                sigma_eps,
            ),
            _ => StateSpaceModel::diagonal(labels, self.sigma_beta, sigma_eps),
        }
    }
}

/// Maximum-likelihood grid search over log-spaced (sigma_beta, sigma_eps)
/// candidates centered on the configured values. Candidate filters run in
/// parallel. Returns the winning pair.
pub fn grid_search_hyperparams(
    base: &StateSpaceModel,
    obs: &[Observation],
    points: usize,
) -> Result<(f64, f64), StateSpaceError> {
    let points = points.max(1);
    let mut candidates = Vec::new();
    for i in 0..points {
        for j in 0..points {
            let span = 2.0; // decades spanned around the center
            let offset = |idx: usize| {
                if points == 1 {
                    0.0
                } else {
                    span * (idx as f64 / (points - 1) as f64 - 0.5)
                }
            };
            let sb = base.sigma_beta * 10f64.powf(offset(i));
            let se = base.sigma_eps * 10f64.powf(offset(j));
            candidates.push((sb, se));
        }
    }
    let labels = base.regressor_labels.clone();
    let scored = par_map(candidates, |(sb, se)| {
        let scale = (sb * sb) / (base.sigma_beta * base.sigma_beta);
        let model = StateSpaceModel {
            regressor_labels: labels.clone(),
            sigma_beta: sb,
            sigma_eps: se,
            state_cov_prior: &base.state_cov_prior * scale,
            beta0_mean: base.beta0_mean.clone(),
            beta0_cov: base.beta0_cov.clone(),
        };
        let ll = filter_forward(&model, obs)
            .map(|p| p.loglik)
            .unwrap_or(f64::NEG_INFINITY);
        ((sb, se), ll)
    });
    scored
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(pair, _)| pair)
        .ok_or(StateSpaceError::NoObservations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use chrono::NaiveDate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn dates(n: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        (0..n)
            .map(|i| start + chrono::Duration::days(i as i64))
            .collect()
    }

    fn scalar_obs(y: &[f64], x: &[f64]) -> Vec<Observation> {
        dates(y.len())
            .into_iter()
            .zip(y.iter().zip(x))
            .map(|(date, (&y, &x))| Observation {
                date,
                y,
                x: DVector::from_vec(vec![x]),
            })
            .collect()
    }

    #[test]
    fn zero_noise_tracks_observations() {
        let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = vec![1.0; 50];
        let model =
            StateSpaceModel::diagonal(vec!["c".into()], 1.0, 1e-12).unwrap();
        let path = filter_forward(&model, &scalar_obs(&y, &x)).unwrap();
        for (t, &target) in y.iter().enumerate() {
            assert!(
                (path.filtered_mean[t][0] - target).abs() < 1e-6,
                "t={t}"
            );
        }
    }

    #[test]
    fn static_limit_matches_recursive_least_squares() {
        // sigma_beta -> 0 with constant x: Bayesian linear regression of a
        // static coefficient, posterior mean (sum x y) / (sum x^2 + s^2/p0)
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let beta = 0.8;
        let sigma_eps = 0.1;
        let n = 400;
        let x: Vec<f64> = (0..n).map(|_| 1.5).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                beta * x + sigma_eps * z
            })
            .collect();
        let model =
            StateSpaceModel::diagonal(vec!["b".into()], 1e-12, sigma_eps).unwrap();
        let path = filter_forward(&model, &scalar_obs(&y, &x)).unwrap();
        let s2 = sigma_eps * sigma_eps;
        let num: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let den: f64 = x.iter().map(|a| a * a).sum::<f64>() + s2; // prior var 1
        let gls = num / den;
        assert_abs_diff_eq!(path.filtered_mean[n - 1][0], gls, epsilon = 1e-6);
    }

    /// Independently coded textbook scalar-observation Kalman filter used as
    /// an oracle; plain vectors, standard (non-Joseph) covariance update.
    #[allow(clippy::type_complexity, clippy::needless_range_loop)]
    fn textbook_filter(
        sigma_beta: f64,
        sigma_eps: f64,
        obs: &[Observation],
        k: usize,
    ) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>, f64) {
        let q = sigma_beta * sigma_beta;
        let r = sigma_eps * sigma_eps;
        let mut mean = vec![0.0; k];
        let mut cov: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let mut means = Vec::new();
        let mut covs = Vec::new();
        let mut loglik = 0.0;
        for o in obs {
            for (i, row) in cov.iter_mut().enumerate() {
                row[i] += q;
            }
            let x: Vec<f64> = o.x.iter().copied().collect();
            let px: Vec<f64> = (0..k)
                .map(|i| (0..k).map(|j| cov[i][j] * x[j]).sum())
                .collect();
            let s: f64 = (0..k).map(|i| x[i] * px[i]).sum::<f64>() + r;
            let v = o.y - (0..k).map(|i| x[i] * mean[i]).sum::<f64>();
            let gain: Vec<f64> = px.iter().map(|p| p / s).collect();
            for i in 0..k {
                mean[i] += gain[i] * v;
            }
            let mut new_cov = vec![vec![0.0; k]; k];
            for i in 0..k {
                for j in 0..k {
                    new_cov[i][j] = cov[i][j] - gain[i] * px[j];
                }
            }
            // symmetrize
            for i in 0..k {
                for j in 0..i {
                    let m = 0.5 * (new_cov[i][j] + new_cov[j][i]);
                    new_cov[i][j] = m;
                    new_cov[j][i] = m;
                }
            }
            cov = new_cov;
            loglik += -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + v * v / s);
            means.push(mean.clone());
            covs.push(cov.clone());
        }
        (means, covs, loglik)
    }

    fn synthetic_obs(seed: u64, n: usize, k: usize, sigma_beta: f64, sigma_eps: f64) -> Vec<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut beta = vec![0.3; k];
        let ds = dates(n);
        (0..n)
            .map(|t| {
                for b in beta.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *b += sigma_beta * z;
                }
                let x: Vec<f64> = (0..k)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z
                    })
                    .collect();
                let noise: f64 = StandardNormal.sample(&mut rng);
                let y = x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()
                    + sigma_eps * noise;
                Observation {
                    date: ds[t],
                    y,
                    x: DVector::from_vec(x),
                }
            })
            .collect()
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn diagonal_filter_matches_textbook_oracle() {
        let (sb, se) = (0.02, 0.1);
        let obs = synthetic_obs(9, 500, 3, sb, se);
        let model = StateSpaceModel::diagonal(
            vec!["a".into(), "b".into(), "c".into()],
            sb,
            se,
        )
        .unwrap();
        let path = filter_forward(&model, &obs).unwrap();
        let (means, covs, loglik) = textbook_filter(sb, se, &obs, 3);
        for t in 0..obs.len() {
            for i in 0..3 {
                assert!(
                    (path.filtered_mean[t][i] - means[t][i]).abs() < 1e-10,
                    "mean t={t} i={i}"
                );
                for j in 0..3 {
                    assert!(
                        (path.filtered_cov[t][(i, j)] - covs[t][i][j]).abs() < 1e-10,
                        "cov t={t}"
                    );
                }
            }
        }
        assert_abs_diff_eq!(path.loglik, loglik, epsilon = 1e-8);
    }

    #[test]
    fn covariance_symmetry_and_psd() {
        let obs = synthetic_obs(12, 300, 4, 0.05, 0.2);
        let model = StateSpaceModel::block_correlated(
            (0..4).map(|i| format!("r{i}")).collect(),
            &[0, 0, 1, 1],
            0.2,
            0.05,
            0.2,
        )
        .unwrap();
        let path = filter_forward(&model, &obs).unwrap();
        let smoothed = smooth_backward(&model, &path).unwrap();
        let check = |p: &DMatrix<f64>| {
            let asym = (p - p.transpose()).amax();
            assert!(asym < 1e-10, "asymmetry {asym}");
            let min_ev = ((p + p.transpose()) * 0.5).symmetric_eigenvalues().min();
            assert!(min_ev >= -1e-10, "eigenvalue {min_ev}");
        };
        for p in &smoothed.filtered_cov {
            check(p);
        }
        for p in smoothed.smoothed_cov.as_ref().unwrap() {
            check(p);
        }
        // smoothing dominance on the trace
        for t in 0..smoothed.len() {
            let tf = smoothed.filtered_cov[t].trace();
            let ts = smoothed.smoothed_cov.as_ref().unwrap()[t].trace();
            assert!(ts <= tf + 1e-10, "t={t}: {ts} > {tf}");
        }
    }

    #[test]
    fn full_cov_model_with_true_diagonal_matches_diagonal_loglik() {
        let (sb, se) = (0.03, 0.15);
        let obs = synthetic_obs(5, 400, 3, sb, se);
        let labels: Vec<String> = (0..3).map(|i| format!("r{i}")).collect();
        let diag = StateSpaceModel::diagonal(labels.clone(), sb, se).unwrap();
        let full = StateSpaceModel::with_state_cov(
            labels,
            sb,
            se,
            DMatrix::identity(3, 3) * sb * sb,
            DVector::zeros(3),
            DMatrix::identity(3, 3),
        )
        .unwrap();
        let ll_diag = filter_forward(&diag, &obs).unwrap().loglik;
        let ll_full = filter_forward(&full, &obs).unwrap().loglik;
        assert_abs_diff_eq!(ll_diag, ll_full, epsilon = 1e-8);
    }

    #[test]
    fn permutation_equivariance() {
        let (sb, se) = (0.02, 0.1);
        let obs = synthetic_obs(33, 200, 3, sb, se);
        let perm = [2usize, 0, 1];
        let permuted: Vec<Observation> = obs
            .iter()
            .map(|o| Observation {
                date: o.date,
                y: o.y,
                x: DVector::from_vec(perm.iter().map(|&i| o.x[i]).collect()),
            })
            .collect();
        let labels: Vec<String> = (0..3).map(|i| format!("r{i}")).collect();
        let model = StateSpaceModel::diagonal(labels, sb, se).unwrap();
        let a = filter_forward(&model, &obs).unwrap();
        let b = filter_forward(&model, &permuted).unwrap();
        assert_abs_diff_eq!(a.loglik, b.loglik, epsilon = 1e-10);
        for t in 0..a.len() {
            for (slot, &src) in perm.iter().enumerate() {
                assert_abs_diff_eq!(
                    b.filtered_mean[t][slot],
                    a.filtered_mean[t][src],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn single_observation_smoothed_equals_filtered() {
        let obs = scalar_obs(&[0.5], &[1.0]);
        let model = StateSpaceModel::diagonal(vec!["c".into()], 0.1, 0.1).unwrap();
        let path = filter_forward(&model, &obs).unwrap();
        let smoothed = smooth_backward(&model, &path).unwrap();
        assert_eq!(
            smoothed.smoothed_mean.as_ref().unwrap()[0],
            smoothed.filtered_mean[0]
        );
        assert_eq!(
            smoothed.smoothed_cov.as_ref().unwrap()[0],
            smoothed.filtered_cov[0]
        );
    }

    #[test]
    fn static_state_smoothed_means_constant() {
        let obs = synthetic_obs(8, 150, 2, 1e-12, 0.1);
        let model = StateSpaceModel::diagonal(
            vec!["a".into(), "b".into()],
            1e-12,
            0.1,
        )
        .unwrap();
        let path = filter_forward(&model, &obs).unwrap();
        let smoothed = smooth_backward(&model, &path).unwrap();
        let means = smoothed.smoothed_mean.as_ref().unwrap();
        let last = &means[means.len() - 1];
        for m in means {
            for i in 0..2 {
                assert!((m[i] - last[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn smoothing_reduces_rmse_on_drifting_betas() {
        // random-walk betas, sigma_beta = 0.01, K = 3, 2000 days
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (sb, se) = (0.01, 0.1);
        let n = 2000;
        let k = 3;
        let ds = dates(n);
        let mut beta = vec![0.5, -0.2, 0.1];
        let mut truth = Vec::with_capacity(n);
        let obs: Vec<Observation> = (0..n)
            .map(|t| {
                for b in beta.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *b += sb * z;
                }
                truth.push(beta.clone());
                let x: Vec<f64> = (0..k)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z
                    })
                    .collect();
                let noise: f64 = StandardNormal.sample(&mut rng);
                let y = x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + se * noise;
                Observation {
                    date: ds[t],
                    y,
                    x: DVector::from_vec(x),
                }
            })
            .collect();
        let model = StateSpaceModel::diagonal(
            (0..k).map(|i| format!("r{i}")).collect(),
            sb,
            se,
        )
        .unwrap();
        let path = filter_forward(&model, &obs).unwrap();
        let smoothed = smooth_backward(&model, &path).unwrap();
        let rmse = |means: &[DVector<f64>]| {
            let mut sum = 0.0;
            for (t, truth_t) in truth.iter().enumerate() {
                for i in 0..k {
                    sum += (means[t][i] - truth_t[i]).powi(2);
                }
            }
            (sum / (n * k) as f64).sqrt()
        };
        let filtered_rmse = rmse(&smoothed.filtered_mean);
        let smoothed_rmse = rmse(smoothed.smoothed_mean.as_ref().unwrap());
        assert!(
            smoothed_rmse <= filtered_rmse,
            "smoothed {smoothed_rmse} vs filtered {filtered_rmse}"
        );
    }

    #[test]
    fn nav_weight_recovery_constant_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let classes = ["Eq", "Bd", "Fx", "Co"];
        let n = 600;
        let ds = dates(n + 1);
        let rets: Vec<(String, ReturnSeries)> = classes
            .iter()
            .map(|c| {
                let values: Vec<f64> = (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        0.01 * z
                    })
                    .collect();
                (
                    c.to_string(),
                    ReturnSeries::new(ds[1..].to_vec(), values).unwrap(),
                )
            })
            .collect();
        let mut nav = vec![100.0];
        for t in 0..n {
            let day: f64 = rets.iter().map(|(_, r)| 0.25 * r.values[t]).sum();
            nav.push(nav[t] * (1.0 + day));
        }
        let nav = PriceSeries::new(ds.clone(), nav).unwrap();
        let k = classes.len();
        let model = StateSpaceModel::with_state_cov(
            classes.iter().map(|c| c.to_string()).collect(),
            1e-4,
            1e-6,
            DMatrix::identity(k, k) * 1e-8,
            DVector::from_element(k, 1.0 / k as f64),
            DMatrix::identity(k, k) * 0.25,
        )
        .unwrap();
        let path = decode_nav_weights(&model, &rets, &nav).unwrap();
        let means = path.smoothed_mean.as_ref().unwrap();
        for m in &means[50..] {
            for i in 0..k {
                assert!((m[i] - 0.25).abs() < 0.02, "weight {}", m[i]);
            }
        }
    }

    #[test]
    fn nav_identity_portfolio() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 400;
        let ds = dates(n + 1);
        let make = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    0.01 * z
                })
                .collect()
        };
        let a = make(&mut rng);
        let b = make(&mut rng);
        let rets = vec![
            (
                "A".to_string(),
                ReturnSeries::new(ds[1..].to_vec(), a.clone()).unwrap(),
            ),
            (
                "B".to_string(),
                ReturnSeries::new(ds[1..].to_vec(), b).unwrap(),
            ),
        ];
        let mut nav = vec![100.0];
        for r in &a {
            nav.push(nav.last().unwrap() * (1.0 + r));
        }
        let nav = PriceSeries::new(ds, nav).unwrap();
        let model = StateSpaceModel::with_state_cov(
            vec!["A".into(), "B".into()],
            1e-4,
            1e-6,
            DMatrix::identity(2, 2) * 1e-8,
            DVector::from_element(2, 0.5),
            DMatrix::identity(2, 2) * 0.25,
        )
        .unwrap();
        let path = decode_nav_weights(&model, &rets, &nav).unwrap();
        let last = &path.smoothed_mean.as_ref().unwrap()[path.len() - 1];
        assert!((last[0] - 1.0).abs() < 0.02, "wA={}", last[0]);
        assert!(last[1].abs() < 0.02, "wB={}", last[1]);
    }

    #[test]
    fn random_walk_weights_beat_misspecified_static_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let n = 1000;
        let ds = dates(n + 1);
        let k = 2;
        let mut w = [0.6, 0.4];
        let mut rets_values = vec![Vec::new(); k];
        let mut nav = vec![100.0];
        for _ in 0..n {
            for wi in w.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *wi += 0.01 * z;
            }
            let day: f64 = (0..k)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let r = 0.01 * z;
                    rets_values[j].push(r);
                    w[j] * r
                })
                .sum();
            nav.push(nav.last().unwrap() * (1.0 + day));
        }
        let rets: Vec<(String, ReturnSeries)> = (0..k)
            .map(|j| {
                (
                    format!("c{j}"),
                    ReturnSeries::new(ds[1..].to_vec(), rets_values[j].clone()).unwrap(),
                )
            })
            .collect();
        let nav = PriceSeries::new(ds, nav).unwrap();
        let obs = nav_observations(&rets, &nav).unwrap();
        let dynamic = StateSpaceModel::diagonal(
            vec!["c0".into(), "c1".into()],
            0.01,
            1e-4,
        )
        .unwrap();
        let static_model = StateSpaceModel::diagonal(
            vec!["c0".into(), "c1".into()],
            1e-9,
            1e-4,
        )
        .unwrap();
        let ll_dyn = filter_forward(&dynamic, &obs).unwrap().loglik;
        let ll_static = filter_forward(&static_model, &obs).unwrap().loglik;
        assert!(ll_dyn > ll_static, "{ll_dyn} vs {ll_static}");
    }

    #[test]
    fn nav_rejects_non_positive() {
        let ds = dates(3);
        assert!(PriceSeries::new(ds, vec![100.0, -1.0, 100.0]).is_err());
    }

    #[test]
    fn replicate_noiseless_limit() {
        let obs = synthetic_obs(2, 800, 2, 1e-9, 1e-9);
        let model = StateSpaceModel::diagonal(
            vec!["a".into(), "b".into()],
            1e-9,
            1e-6,
        )
        .unwrap();
        let path = filter_forward(&model, &obs).unwrap();
        let rep = replicate_returns(&model, &path, &obs).unwrap();
        let y: Vec<f64> = obs.iter().map(|o| o.y).collect();
        let corr = correlation(&rep.values[50..], &y[50..]);
        assert!(corr > 0.999, "corr {corr}");
    }

    #[test]
    fn replicate_pure_noise_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let n = 2000;
        let ds = dates(n);
        let obs: Vec<Observation> = (0..n)
            .map(|t| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let x: f64 = StandardNormal.sample(&mut rng);
                Observation {
                    date: ds[t],
                    y: 0.01 * z,
                    x: DVector::from_vec(vec![x]),
                }
            })
            .collect();
        let model = StateSpaceModel::diagonal(vec!["x".into()], 0.001, 0.01).unwrap();
        let path = filter_forward(&model, &obs).unwrap();
        let rep = replicate_returns(&model, &path, &obs).unwrap();
        let y: Vec<f64> = obs.iter().map(|o| o.y).collect();
        let corr = correlation(&rep.values, &y);
        assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "corr {corr}");
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (x, y) in a.iter().zip(b) {
            num += (x - ma) * (y - mb);
            va += (x - ma).powi(2);
            vb += (y - mb).powi(2);
        }
        num / (va.sqrt() * vb.sqrt())
    }

    #[test]
    fn filter_input_validation() {
        let model = StateSpaceModel::diagonal(vec!["a".into()], 0.1, 0.1).unwrap();
        assert!(matches!(
            filter_forward(&model, &[]),
            Err(StateSpaceError::NoObservations)
        ));
        let bad = vec![Observation {
            date: dates(1)[0],
            y: f64::NAN,
            x: DVector::from_vec(vec![1.0]),
        }];
        assert!(matches!(
            filter_forward(&model, &bad),
            Err(StateSpaceError::NonFinite(_))
        ));
        let wrong_dim = vec![Observation {
            date: dates(1)[0],
            y: 0.0,
            x: DVector::from_vec(vec![1.0, 2.0]),
        }];
        assert!(matches!(
            filter_forward(&model, &wrong_dim),
            Err(StateSpaceError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn grid_search_prefers_true_hyperparameters() {
        let (sb, se) = (0.02, 0.1);
        let obs = synthetic_obs(3, 800, 2, sb, se);
        let base = StateSpaceModel::diagonal(
            vec!["a".into(), "b".into()],
            sb,
            se,
        )
        .unwrap();
        let (best_sb, best_se) = grid_search_hyperparams(&base, &obs, 5).unwrap();
        // the center of the grid is the truth; it should win
        assert_abs_diff_eq!(best_sb, sb, epsilon = 1e-12);
        assert_abs_diff_eq!(best_se, se, epsilon = 1e-12);
    }
}
