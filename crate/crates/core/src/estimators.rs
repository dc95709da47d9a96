//! Point estimators of totals, means and quantiles from any weight vector.

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::interp_cdf::{invert_interp_cdf, QuantileInversion};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "parameter", rename_all = "lowercase")]
pub enum Parameter {
    Total,
    Mean,
    Quantile { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightsSource {
    Design,
    Calibrated,
    El,
    Ipw,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRequest {
    #[serde(flatten)]
    pub parameter: Parameter,
    pub variable: String,
    pub weights_source: WeightsSource,
}

impl EstimateRequest {
    pub fn validate(&self) -> Result<()> {
        if let Parameter::Quantile { alpha } = self.parameter {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(CalibError::InvalidOrder(alpha));
            }
        }
        Ok(())
    }
}

fn check_len(w: &[f64], y: &[f64]) -> Result<()> {
    if w.len() != y.len() {
        return Err(CalibError::LengthMismatch {
            expected: w.len(),
            got: y.len(),
        });
    }
    Ok(())
}

pub fn est_total(w: &[f64], y: &[f64]) -> Result<f64> {
    check_len(w, y)?;
    Ok(w.iter().zip(y).map(|(w, y)| w * y).sum())
}

pub fn est_mean(w: &[f64], y: &[f64], population: f64) -> Result<f64> {
    if !(population > 0.0) {
        return Err(CalibError::NonPositivePopulation(population));
    }
    Ok(est_total(w, y)? / population)
}

/// Quantile from the interpolated CDF of `y` under weights `w`. When the
/// weights do not sum to `population` (within `1e-6` relative), their own
/// sum is used instead (Hajek normalization).
pub fn est_quantile_detailed(w: &[f64], y: &[f64], alpha: f64, population: f64) -> Result<QuantileInversion> {
    check_len(w, y)?;
    if !(population > 0.0) {
        return Err(CalibError::NonPositivePopulation(population));
    }
    let sum: f64 = w.iter().sum();
    let norm = if (sum - population).abs() <= 1e-6 * population {
        population
    } else {
        sum
    };
    invert_interp_cdf(y, w, alpha, norm)
}

pub fn est_quantile(w: &[f64], y: &[f64], alpha: f64, population: f64) -> Result<f64> {
    est_quantile_detailed(w, y, alpha, population).map(|q| q.value)
}

/// Equal-weight estimate with `N = n`.
pub fn naive_estimate(y: &[f64], parameter: Parameter) -> Result<f64> {
    if y.is_empty() {
        return Err(CalibError::EmptySample);
    }
    let n = y.len() as f64;
    let ones = vec![1.0; y.len()];
    match parameter {
        Parameter::Total => est_total(&ones, y),
        Parameter::Mean => est_mean(&ones, y, n),
        Parameter::Quantile { alpha } => est_quantile(&ones, y, alpha, n),
    }
}

/// Dispatches `parameter` to the matching estimator.
pub fn estimate(w: &[f64], y: &[f64], parameter: Parameter, population: f64) -> Result<f64> {
    match parameter {
        Parameter::Total => est_total(w, y),
        Parameter::Mean => est_mean(w, y, population),
        Parameter::Quantile { alpha } => est_quantile(w, y, alpha, population),
    }
}
