//! Logistic propensity model for a non-probability sample, fitted by
//! balancing sample covariate totals against their model-expected
//! population totals, and the inverse probability weights derived from it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::solvers::SolverOptions;

const MAX_HALVINGS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityFit {
    /// Intercept first.
    pub theta: Vec<f64>,
    pub pi_sample: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest `|U_j| / sum_U |z_kj|` over the score equations.
    pub score_residual: f64,
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn linear_predictor(x: &DMatrix<f64>, theta: &DVector<f64>) -> DVector<f64> {
    let slope = theta.rows(1, theta.len() - 1);
    (x * slope).add_scalar(theta[0])
}

/// Solves `sum_{k in s} (1, x_k) = sum_{k in U} pi(theta; x_k) (1, x_k)` for
/// `pi(theta; x) = 1 / (1 + exp(-theta_0 - theta' x))` by damped Newton.
///
/// `opts.tolerance` bounds each score equation relative to the population
/// column sum `sum_U |z_kj|`.
pub fn fit_propensity(
    sample_x: &DMatrix<f64>,
    population_x: &DMatrix<f64>,
    opts: &SolverOptions,
) -> Result<PropensityFit> {
    opts.validate()?;
    let n = sample_x.nrows();
    let big_n = population_x.nrows();
    let p = population_x.ncols();
    if sample_x.ncols() != p {
        return Err(CalibError::LengthMismatch {
            expected: p,
            got: sample_x.ncols(),
        });
    }
    if n == 0 {
        return Err(CalibError::EmptySample);
    }
    if n >= big_n {
        return Err(CalibError::Infeasible(format!(
            "sample size {n} must be below population size {big_n} for propensities in (0, 1)"
        )));
    }

    let mut sample_totals = DVector::zeros(p + 1);
    sample_totals[0] = n as f64;
    for j in 0..p {
        sample_totals[j + 1] = sample_x.column(j).sum();
    }
    let mut scale = DVector::zeros(p + 1);
    scale[0] = big_n as f64;
    for j in 0..p {
        let s = population_x.column(j).iter().map(|v| v.abs()).sum::<f64>();
        scale[j + 1] = if s > 0.0 { s } else { 1.0 };
    }

    let score = |theta: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let pi = linear_predictor(population_x, theta).map(sigmoid);
        let mut expected = DVector::zeros(p + 1);
        expected[0] = pi.sum();
        let tail = population_x.tr_mul(&pi);
        expected.rows_mut(1, p).copy_from(&tail);
        (&sample_totals - expected, pi)
    };
    let size = |u: &DVector<f64>| u.component_div(&scale).amax();

    let mut theta = DVector::zeros(p + 1);
    theta[0] = logit(n as f64 / big_n as f64);
    let (mut u, mut pi) = score(&theta);
    let mut current = size(&u);
    let mut iterations = 0;
    let labels: Vec<String> = std::iter::once("intercept".to_string())
        .chain((1..=p).map(|j| format!("x{j}")))
        .collect();

    while current > opts.tolerance && iterations < opts.max_iterations {
        // information matrix sum_U pi (1 - pi) z z'
        let v = pi.map(|p| p * (1.0 - p));
        let mut info = DMatrix::zeros(p + 1, p + 1);
        info[(0, 0)] = v.sum();
        let xv = population_x.tr_mul(&v);
        for j in 0..p {
            info[(0, j + 1)] = xv[j];
            info[(j + 1, 0)] = xv[j];
        }
        let mut weighted = population_x.clone();
        for (k, mut row) in weighted.row_iter_mut().enumerate() {
            row *= v[k];
        }
        let xx = population_x.tr_mul(&weighted);
        info.view_mut((1, 1), (p, p)).copy_from(&xx);

        let step = match crate::solvers::solve_gram(&info, &u, &labels, true) {
            Ok(s) => s,
            Err(_) => break,
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let candidate = &theta + &step * t;
            let (cu, cpi) = score(&candidate);
            let cs = size(&cu);
            if cs.is_finite() && cs < current {
                theta = candidate;
                u = cu;
                pi = cpi;
                current = cs;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }

    let pi_sample: Vec<f64> = linear_predictor(sample_x, &theta).iter().map(|&v| sigmoid(v)).collect();
    Ok(PropensityFit {
        theta: theta.iter().copied().collect(),
        pi_sample,
        converged: current <= opts.tolerance,
        iterations,
        score_residual: current,
    })
}

/// `1 / pi_k` for every sampled unit.
pub fn ipw_weights(fit: &PropensityFit) -> Result<Vec<f64>> {
    if !fit.converged {
        return Err(CalibError::InvalidInput("propensity fit did not converge".into()));
    }
    inverse_probabilities(&fit.pi_sample)
}

pub fn inverse_probabilities(pi: &[f64]) -> Result<Vec<f64>> {
    pi.iter()
        .enumerate()
        .map(|(k, &p)| {
            if p > 0.0 && p <= 1.0 {
                Ok(1.0 / p)
            } else {
                Err(CalibError::InvalidInput(format!(
                    "inclusion probability {p} at index {} is not in (0, 1]",
                    k + 1
                )))
            }
        })
        .collect()
}
