//! Linearly interpolated distribution functions over a sample, their
//! inversion, and the exact step-function CDF/quantile used as ground truth.
//!
//! The interpolated CDF replaces the Heaviside step at `t` by a ramp between
//! the nearest sample values `L <= t < U`: units at or below `L` count fully,
//! units equal to `U` count with fraction `beta = (t - L) / (U - L)`.

use std::cmp::Ordering;

use crate::error::{CalibError, Result};

/// Nearest sample values around a point `t`: `lower <= t < upper`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lower: f64,
    pub upper: f64,
    pub beta: f64,
}

pub fn bracket(values: &[f64], t: f64) -> Result<Bracket> {
    if values.is_empty() {
        return Err(CalibError::EmptySample);
    }
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    for &v in values {
        if v <= t {
            if v > lower {
                lower = v;
            }
        } else if v < upper {
            upper = v;
        }
    }
    let beta = if lower == f64::NEG_INFINITY {
        0.0
    } else if upper == f64::INFINITY {
        1.0
    } else {
        (t - lower) / (upper - lower)
    };
    Ok(Bracket { lower, upper, beta })
}

/// Interpolated step for a unit with value `y` given the bracket of its sample.
pub fn h_interp(y: f64, b: &Bracket) -> f64 {
    if y <= b.lower {
        1.0
    } else if y > b.upper {
        0.0
    } else {
        b.beta
    }
}

fn check_weighted(values: &[f64], weights: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(CalibError::EmptySample);
    }
    if values.len() != weights.len() {
        return Err(CalibError::LengthMismatch {
            expected: values.len(),
            got: weights.len(),
        });
    }
    Ok(())
}

/// `sum_k w_k H(t, y_k) / sum_k w_k`.
pub fn interp_cdf(values: &[f64], weights: &[f64], t: f64) -> Result<f64> {
    check_weighted(values, weights)?;
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(CalibError::NonPositiveTotalWeight(total));
    }
    let b = bracket(values, t)?;
    let mass: f64 = values
        .iter()
        .zip(weights)
        .map(|(&y, &w)| w * h_interp(y, &b))
        .sum();
    Ok(mass / total)
}

/// Result of inverting the interpolated CDF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileInversion {
    pub value: f64,
    /// Set when `N * alpha` fell outside the invertible range and the result
    /// was clamped to the sample minimum or maximum.
    pub clamped: bool,
}

/// Inverts the interpolated CDF at `alpha` for weights summing to `population`.
///
/// On the sorted distinct values `v_1 < ... < v_G` with cumulative weights
/// `C_g`, the smallest `g` with `C_g <= N alpha < C_{g+1}` gives
/// `v_g + (N alpha - C_g) / W_{g+1} * (v_{g+1} - v_g)`, where `W_{g+1}` is the
/// weight of all units tied at `v_{g+1}`. Outside that range the result is
/// clamped.
pub fn invert_interp_cdf(
    values: &[f64],
    weights: &[f64],
    alpha: f64,
    population: f64,
) -> Result<QuantileInversion> {
    check_weighted(values, weights)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CalibError::InvalidOrder(alpha));
    }
    if !(population > 0.0 && population.is_finite()) {
        return Err(CalibError::NonPositivePopulation(population));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - population).abs() > 1e-6 * population {
        return Err(CalibError::WeightSumMismatch { sum, population });
    }

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));

    // distinct values with the weight of their tie group
    let mut groups: Vec<(f64, f64)> = Vec::with_capacity(values.len());
    for &k in &order {
        match groups.last_mut() {
            Some((v, w)) if *v == values[k] => *w += weights[k],
            _ => groups.push((values[k], weights[k])),
        }
    }

    let target = population * alpha;
    let (first_value, first_weight) = groups[0];
    if target < first_weight {
        return Ok(QuantileInversion {
            value: first_value,
            clamped: true,
        });
    }
    let mut cumulative = 0.0;
    for g in 0..groups.len() - 1 {
        cumulative += groups[g].1;
        let (next_value, next_weight) = groups[g + 1];
        if cumulative <= target && target < cumulative + next_weight {
            let value = groups[g].0 + (target - cumulative) / next_weight * (next_value - groups[g].0);
            return Ok(QuantileInversion {
                value,
                clamped: false,
            });
        }
    }
    // Only reachable when N alpha >= sum of weights, or when negative weights
    // make the cumulative sum non-monotone.
    let mut cumulative = 0.0;
    for &(v, w) in &groups {
        cumulative += w;
        if cumulative >= target {
            return Ok(QuantileInversion {
                value: v,
                clamped: true,
            });
        }
    }
    Ok(QuantileInversion {
        value: groups[groups.len() - 1].0,
        clamped: true,
    })
}

pub fn interp_quantile(values: &[f64], weights: &[f64], alpha: f64, population: f64) -> Result<f64> {
    invert_interp_cdf(values, weights, alpha, population).map(|q| q.value)
}

/// Logistic approximation to the unit step, `1 / (1 + exp(-2 k x))`.
pub fn smooth_heaviside(x: f64, k: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * k * x).exp())
}

/// Right-continuous empirical CDF: share of values `<= t`.
pub fn population_cdf(values: &[f64], t: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(CalibError::EmptySample);
    }
    let count = values.iter().filter(|&&v| v <= t).count();
    Ok(count as f64 / values.len() as f64)
}

/// `inf { t : F(t) >= alpha }` for the empirical CDF of `values`.
pub fn population_quantile(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(CalibError::EmptySample);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(quantile_of_sorted(&sorted, alpha))
}

/// Same as [`population_quantile`] for data already sorted ascending.
pub fn quantile_of_sorted(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    let nf = n as f64;
    // smallest count k with k / n >= alpha, evaluated exactly as the CDF is
    let mut k = ((alpha * nf).ceil() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / nf >= alpha {
        k -= 1;
    }
    while k < n && (k as f64) / nf < alpha {
        k += 1;
    }
    sorted[k - 1]
}
