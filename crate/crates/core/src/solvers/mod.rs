//! Calibration weight solvers: the closed-form quadratic solution, the
//! dual Newton solver for quadratic/raking/logit distances, and empirical
//! likelihood.

mod distance;
mod dual;
mod el;
mod quadratic;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSystem;
use crate::domain::{Diagnostics, WeightSet};
use crate::error::{CalibError, Result};

pub use distance::Distance;
pub use dual::solve_dual;
pub use el::{el_centered_constraints, solve_el, ELWeights};
pub use quadratic::solve_quadratic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Threshold on `max_j |r_j| / max(1, |h_j|)`.
    pub tolerance: f64,
    pub max_halvings: usize,
    /// Equilibrate constraint columns before factorizing.
    pub rescale: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-8,
            max_halvings: 30,
            rescale: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(CalibError::InvalidOptions("tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(CalibError::InvalidOptions("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

const PIVOT_THRESHOLD: f64 = 1e-12;

/// Solves `gram * x = rhs` for a symmetric positive semi-definite `gram`,
/// refusing (with the offending columns named) when it is numerically rank
/// deficient.
pub(crate) fn solve_gram(
    gram: &DMatrix<f64>,
    rhs: &DVector<f64>,
    labels: &[String],
    equilibrate: bool,
) -> Result<DVector<f64>> {
    let m = gram.nrows();
    if m == 0 {
        return Ok(DVector::zeros(0));
    }
    let diag: Vec<f64> = (0..m).map(|j| gram[(j, j)]).collect();
    let zero: Vec<String> = diag
        .iter()
        .enumerate()
        .filter(|(_, &g)| !(g > 0.0 && g.is_finite()))
        .map(|(j, _)| labels[j].clone())
        .collect();
    if !zero.is_empty() {
        return Err(CalibError::RankDeficient { columns: zero });
    }
    let s: Vec<f64> = if equilibrate {
        diag.iter().map(|g| 1.0 / g.sqrt()).collect()
    } else {
        vec![1.0; m]
    };
    let scaled = DMatrix::from_fn(m, m, |i, j| gram[(i, j)] * s[i] * s[j]);

    let chol = match scaled.clone().cholesky() {
        Some(c) => c,
        None => return Err(rank_deficiency(&scaled, labels)),
    };
    let l = chol.l_dirty();
    let pivots: Vec<f64> = (0..m).map(|j| l[(j, j)] * l[(j, j)]).collect();
    let largest = pivots.iter().cloned().fold(0.0, f64::max);
    if pivots.iter().any(|&p| p < PIVOT_THRESHOLD * largest) {
        return Err(rank_deficiency(&scaled, labels));
    }
    let scaled_rhs = DVector::from_fn(m, |i, _| rhs[i] * s[i]);
    let y = chol.solve(&scaled_rhs);
    Ok(DVector::from_fn(m, |i, _| y[i] * s[i]))
}

fn rank_deficiency(scaled: &DMatrix<f64>, labels: &[String]) -> CalibError {
    let eig = SymmetricEigen::new(scaled.clone());
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let v = eig.eigenvectors.column(imin);
    let columns = v
        .iter()
        .enumerate()
        .filter(|(_, c)| c.abs() > 0.1)
        .map(|(j, _)| labels[j].clone())
        .collect();
    CalibError::RankDeficient { columns }
}

/// Fills in residual, distance and ratio diagnostics for final weights.
#[allow(clippy::too_many_arguments)]
pub(crate) fn finish(
    system: &ConstraintSystem,
    d: &[f64],
    q: impl Fn(usize) -> f64,
    distance: Distance,
    w: Vec<f64>,
    iterations: usize,
    converged: bool,
    message: Option<String>,
) -> WeightSet {
    let r = system.residuals(&w).expect("weights have frame length");
    let max_abs_residual = r.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let max_rel_residual = r
        .iter()
        .zip(system.h.iter())
        .map(|(r, h)| r.abs() / h.abs().max(1.0))
        .fold(0.0, f64::max);
    let mut ratio_min = f64::INFINITY;
    let mut ratio_max = f64::NEG_INFINITY;
    let mut distance_value = 0.0;
    for k in 0..w.len() {
        let ratio = w[k] / d[k];
        ratio_min = ratio_min.min(ratio);
        ratio_max = ratio_max.max(ratio);
        distance_value += d[k] / q(k) * distance.g(ratio);
    }
    WeightSet {
        w,
        diagnostics: Diagnostics {
            max_abs_residual,
            max_rel_residual,
            iterations,
            distance_value,
            ratio_min,
            ratio_max,
            converged,
            message,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(m: usize) -> Vec<String> {
        (0..m).map(|j| format!("c{j}")).collect()
    }

    #[test]
    fn solves_well_conditioned_system() {
        let g = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = solve_gram(&g, &b, &labels(2), true).unwrap();
        let back = &g * &x;
        assert!((back - b).norm() < 1e-14);
    }

    #[test]
    fn names_collinear_columns() {
        // c0 and c2 identical, c1 independent
        let a = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 1.0, 2.0, 1.0, 2.0, 3.0, 0.0, 3.0, 1.0, 5.0, 1.0]);
        let g = a.tr_mul(&a);
        let err = solve_gram(&g, &DVector::zeros(3), &labels(3), true).unwrap_err();
        assert_eq!(
            err,
            CalibError::RankDeficient {
                columns: vec!["c0".into(), "c2".into()]
            }
        );
    }

    #[test]
    fn zero_column_is_rank_deficient() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let err = solve_gram(&g, &DVector::zeros(2), &labels(2), true).unwrap_err();
        assert_eq!(
            err,
            CalibError::RankDeficient {
                columns: vec!["c1".into()]
            }
        );
    }

    #[test]
    fn options_validation() {
        assert!(SolverOptions::default().validate().is_ok());
        let bad = SolverOptions {
            tolerance: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverOptions {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
