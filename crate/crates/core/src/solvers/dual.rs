use nalgebra::{DMatrix, DVector};

use super::{finish, solve_gram, Distance, SolverOptions};
use crate::constraints::ConstraintSystem;
use crate::domain::{DistanceSpec, WeightSet};
use crate::error::{CalibError, Result};

struct Iterate {
    w: Vec<f64>,
    residual: DVector<f64>,
    norm: f64,
}

/// Minimizes `sum_k d_k/q_k G(w_k/d_k)` subject to `A^T w = h` by Newton's
/// method on the dual equations `sum_k d_k F(q_k x_k' lambda) x_k = h`,
/// starting from `lambda = 0` and halving steps until the scaled residual
/// norm decreases.
///
/// Non-convergence (including unattainable logit bounds) yields a weight set
/// with `converged == false` holding the best iterate; a singular Jacobian is
/// an error.
pub fn solve_dual(
    system: &ConstraintSystem,
    d: &[f64],
    spec: &DistanceSpec,
    opts: &SolverOptions,
) -> Result<WeightSet> {
    let n = system.n();
    let m = system.m();
    if d.len() != n {
        return Err(CalibError::LengthMismatch { expected: n, got: d.len() });
    }
    spec.validate(n)?;
    opts.validate()?;
    let distance = Distance::from_spec(spec);
    let q = |k: usize| spec.q_at(k);
    let a = &system.a;
    let labels = system.labels();

    // residuals are compared in units of each column's weighted norm
    let col_scale: Vec<f64> = (0..m)
        .map(|j| {
            let s: f64 = (0..n).map(|k| d[k] * a[(k, j)] * a[(k, j)]).sum::<f64>().sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();

    let evaluate = |lambda: &DVector<f64>| -> Iterate {
        let eta = a * lambda;
        let w: Vec<f64> = (0..n).map(|k| d[k] * distance.f(q(k) * eta[k])).collect();
        let residual = a.tr_mul(&DVector::from_column_slice(&w)) - &system.h;
        let norm = residual
            .iter()
            .zip(&col_scale)
            .map(|(r, s)| (r / s).powi(2))
            .sum::<f64>()
            .sqrt();
        Iterate { w, residual, norm }
    };
    let rel_residual = |it: &Iterate| {
        it.residual
            .iter()
            .zip(system.h.iter())
            .map(|(r, h)| r.abs() / h.abs().max(1.0))
            .fold(0.0, f64::max)
    };

    let mut lambda = DVector::zeros(m);
    let mut current = evaluate(&lambda);
    let mut iterations = 0;
    let mut message = None;
    let mut converged = rel_residual(&current) <= opts.tolerance;

    while !converged && iterations < opts.max_iterations {
        let eta = a * &lambda;
        let mut weighted = DMatrix::zeros(n, m);
        for k in 0..n {
            let c = d[k] * q(k) * distance.f_prime(q(k) * eta[k]);
            for j in 0..m {
                weighted[(k, j)] = c * a[(k, j)];
            }
        }
        let jacobian = a.tr_mul(&weighted);
        let step = match solve_gram(&jacobian, &(-&current.residual), &labels, opts.rescale) {
            Ok(step) => step,
            // at lambda = 0 the Jacobian is the Gram matrix, so singularity
            // there is structural; later it means the weights saturated
            Err(e) if iterations == 0 => return Err(e),
            Err(_) => {
                message = Some("Jacobian became singular; constraints may be unattainable".into());
                break;
            }
        };

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let candidate = &lambda + &step * t;
            let next = evaluate(&candidate);
            if next.norm.is_finite() && next.norm < current.norm {
                accepted = Some((candidate, next));
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((l, next)) => {
                lambda = l;
                current = next;
                converged = rel_residual(&current) <= opts.tolerance;
            }
            None => {
                message = Some(format!(
                    "step halving failed after {} halvings; constraints may be unattainable",
                    opts.max_halvings
                ));
                break;
            }
        }
    }
    if !converged && message.is_none() {
        message = Some(format!(
            "no convergence within {} iterations (relative residual {:e})",
            opts.max_iterations,
            rel_residual(&current)
        ));
    }
    Ok(finish(system, d, q, distance, current.w, iterations, converged, message))
}
