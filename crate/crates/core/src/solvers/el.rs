use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{solve_gram, SolverOptions};
use crate::constraints::quantile_pseudo_variable;
use crate::domain::{validate_frame, SampleFrame, TargetSpec, Violation};
use crate::error::{CalibError, Result};

/// Empirical likelihood probabilities over the sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ELWeights {
    pub p: Vec<f64>,
    pub lambda: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub message: Option<String>,
}

/// Maximizes `sum_k log p_k` subject to `sum_k p_k = 1` and
/// `sum_k p_k u_k = 0`. The solution is `p_k = 1 / (n (1 + lambda' u_k))`
/// where `lambda` minimizes the convex dual `-sum_k log(1 + lambda' u_k)`.
///
/// Newton steps are halved until every `1 + lambda' u_k` stays positive and
/// the dual objective decreases. When zero is not inside the convex hull of
/// the rows of `u` the iteration stalls and `converged` is false.
pub fn solve_el(u: &DMatrix<f64>, opts: &SolverOptions) -> Result<ELWeights> {
    opts.validate()?;
    let n = u.nrows();
    let m = u.ncols();
    if n == 0 {
        return Err(CalibError::EmptySample);
    }
    let nf = n as f64;
    if m == 0 {
        return Ok(ELWeights {
            p: vec![1.0 / nf; n],
            lambda: Vec::new(),
            converged: true,
            iterations: 0,
            message: None,
        });
    }

    // unit max-abs columns; lambda is mapped back at the end
    let scale: Vec<f64> = (0..m)
        .map(|j| {
            let s = u.column(j).amax();
            if s > 0.0 && opts.rescale {
                s
            } else {
                1.0
            }
        })
        .collect();
    let us = DMatrix::from_fn(n, m, |k, j| u[(k, j)] / scale[j]);
    let labels: Vec<String> = (0..m).map(|j| format!("u{}", j + 1)).collect();

    let objective = |denom: &DVector<f64>| -> f64 {
        if denom.iter().all(|&v| v > 0.0) {
            -denom.iter().map(|v| v.ln()).sum::<f64>()
        } else {
            f64::INFINITY
        }
    };
    // gradient of the dual divided by n, i.e. -sum_k p_k u_k
    let gradient = |denom: &DVector<f64>| -> DVector<f64> {
        let inv = denom.map(|v| 1.0 / v);
        -(us.tr_mul(&inv)) / nf
    };

    let mut lambda = DVector::zeros(m);
    let mut denom = DVector::from_element(n, 1.0);
    let mut value = objective(&denom);
    let mut grad = gradient(&denom);
    // sum_k p_k = 1 - lambda' sum_k p_k u_k, so a small gradient alone does
    // not certify a solution when lambda runs off to infinity
    let is_solution = |denom: &DVector<f64>, grad: &DVector<f64>| {
        let mass: f64 = denom.iter().map(|v| 1.0 / (nf * v)).sum();
        grad.amax() <= opts.tolerance && (mass - 1.0).abs() <= opts.tolerance
    };
    let mut iterations = 0;
    let mut converged = is_solution(&denom, &grad);
    let mut message = None;
    // a few extra steps past the tolerance drive the moment conditions to
    // rounding level
    let mut polish = 3;

    while iterations < opts.max_iterations && (!converged || polish > 0) {
        if converged {
            polish -= 1;
        }
        let mut weighted = us.clone();
        for (k, mut row) in weighted.row_iter_mut().enumerate() {
            row /= denom[k] * denom[k];
        }
        let hessian = us.tr_mul(&weighted) / nf;
        let step = match solve_gram(&hessian, &(-&grad), &labels, false) {
            Ok(s) => s,
            Err(_) if converged => break,
            Err(e) => return Err(e),
        };

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let candidate = &lambda + &step * t;
            let cand_denom = (&us * &candidate).add_scalar(1.0);
            let cand_value = objective(&cand_denom);
            if cand_value.is_finite() && cand_value <= value {
                let cand_grad = gradient(&cand_denom);
                if !converged || cand_grad.amax() < grad.amax() {
                    accepted = Some((candidate, cand_denom, cand_value, cand_grad));
                }
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((l, dn, v, g)) => {
                iterations += 1;
                lambda = l;
                denom = dn;
                value = v;
                grad = g;
                if !converged {
                    converged = is_solution(&denom, &grad);
                }
            }
            None => {
                if !converged {
                    message = Some("step halving failed; zero may lie outside the convex hull".into());
                }
                break;
            }
        }
    }
    if !converged && message.is_none() {
        message = Some(format!("no convergence within {} iterations", opts.max_iterations));
    }

    let mut p: Vec<f64> = denom.iter().map(|v| 1.0 / (nf * v)).collect();
    let total: f64 = p.iter().sum();
    if converged {
        p.iter_mut().for_each(|v| *v /= total);
    }
    Ok(ELWeights {
        p,
        lambda: lambda.iter().zip(&scale).map(|(l, s)| l / s).collect(),
        converged,
        iterations,
        message,
    })
}

/// Centered EL moment matrix: `x_k - tau / N` for each total target and
/// `a_k - alpha / N` for each quantile target. The size equation is implied
/// by `sum p = 1` and gets no column.
pub fn el_centered_constraints(frame: &SampleFrame, targets: &TargetSpec) -> Result<DMatrix<f64>> {
    let report = validate_frame(frame, targets);
    for v in &report.violations {
        match v {
            Violation::UnknownVariable(name) => return Err(CalibError::MissingColumn(name.clone())),
            Violation::DuplicateQuantile { variable, alpha } => {
                return Err(CalibError::DuplicateQuantile {
                    variable: variable.clone(),
                    alpha: *alpha,
                })
            }
            _ => {}
        }
    }
    report.into_result()?;

    let n = frame.len();
    let population = targets.population_size;
    let m = targets.totals.len() + targets.quantiles.len();
    let mut u = DMatrix::zeros(n, m);
    let mut j = 0;
    for t in &targets.totals {
        let x = frame
            .auxiliary(&t.variable)
            .ok_or_else(|| CalibError::MissingColumn(t.variable.clone()))?;
        let mean = t.value / population;
        for k in 0..n {
            u[(k, j)] = x[k] - mean;
        }
        j += 1;
    }
    for q in &targets.quantiles {
        let x = frame
            .auxiliary(&q.variable)
            .ok_or_else(|| CalibError::MissingColumn(q.variable.clone()))?;
        let a = quantile_pseudo_variable(x, q.value, population)?;
        let center = q.alpha / population;
        for k in 0..n {
            u[(k, j)] = a[k] - center;
        }
        j += 1;
    }
    Ok(u)
}
