use nalgebra::DVector;

use super::{finish, solve_gram, Distance};
use crate::constraints::ConstraintSystem;
use crate::domain::WeightSet;
use crate::error::{CalibError, Result};

/// Closed-form minimizer of `sum_k d_k/q_k (w_k/d_k - 1)^2 / 2` subject to
/// `A^T w = h`:
///
/// `w_k = d_k + d_k q_k (h - A^T d)^T (sum_j d_j q_j x_j x_j^T)^{-1} x_k`.
///
/// Weights may come out negative; they are reported, not clipped.
pub fn solve_quadratic(system: &ConstraintSystem, d: &[f64], q: Option<&[f64]>) -> Result<WeightSet> {
    let n = system.n();
    if d.len() != n {
        return Err(CalibError::LengthMismatch { expected: n, got: d.len() });
    }
    if let Some(q) = q {
        if q.len() != n {
            return Err(CalibError::LengthMismatch { expected: n, got: q.len() });
        }
    }
    let qk = |k: usize| q.map_or(1.0, |q| q[k]);

    let a = &system.a;
    let dq = DVector::from_fn(n, |k, _| d[k] * qk(k));
    let mut weighted = a.clone();
    for (k, mut row) in weighted.row_iter_mut().enumerate() {
        row *= dq[k];
    }
    let gram = a.tr_mul(&weighted);
    let estimated = a.tr_mul(&DVector::from_column_slice(d));
    let gap = &system.h - estimated;
    let coef = solve_gram(&gram, &gap, &system.labels(), true)?;
    let correction = a * coef;
    let w: Vec<f64> = (0..n).map(|k| d[k] + dq[k] * correction[k]).collect();

    let rel = system.max_rel_residual(&w)?;
    if !rel.is_finite() || rel > 1e-6 {
        return Err(CalibError::Infeasible(format!(
            "closed-form weights leave relative residual {rel:e}"
        )));
    }
    let converged = rel <= 1e-8;
    let message = (!converged).then(|| format!("relative residual {rel:e} above 1e-8"));
    Ok(finish(system, d, qk, Distance::Quadratic, w, 1, converged, message))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::build_system;
    use crate::domain::{SampleFrame, TargetSpec};
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_total_worked_example() {
        let f = SampleFrame::with_weights(vec![1.0, 1.0]).with_auxiliary("x", vec![1.0, 2.0]).unwrap();
        let s = build_system(&f, &TargetSpec::new(2.0).total("x", 4.0)).unwrap();
        let ws = solve_quadratic(&s, f.design_weights(), None).unwrap();
        assert_abs_diff_eq!(ws.w[0], 1.2, epsilon = 1e-14);
        assert_abs_diff_eq!(ws.w[1], 1.4, epsilon = 1e-14);
        assert!(ws.converged());
        assert_abs_diff_eq!(ws.diagnostics.ratio_min, 1.2, epsilon = 1e-14);
        assert_abs_diff_eq!(ws.diagnostics.ratio_max, 1.4, epsilon = 1e-14);
    }

    #[test]
    fn feasible_design_weights_unchanged() {
        let f = SampleFrame::with_weights(vec![2.0, 3.0, 1.0]).with_auxiliary("x", vec![1.0, 2.0, 5.0]).unwrap();
        let s = build_system(&f, &TargetSpec::new(6.0).with_size().total("x", 13.0)).unwrap();
        let ws = solve_quadratic(&s, f.design_weights(), None).unwrap();
        for (w, d) in ws.w.iter().zip(f.design_weights()) {
            assert_abs_diff_eq!(w, d, epsilon = 1e-13);
        }
        assert_abs_diff_eq!(ws.diagnostics.distance_value, 0.0, epsilon = 1e-20);
    }

    #[test]
    fn size_only_is_ratio_adjustment() {
        let d = vec![1.0, 2.0, 3.0, 4.0];
        let f = SampleFrame::with_weights(d.clone());
        let s = build_system(&f, &TargetSpec::new(25.0).with_size()).unwrap();
        let ws = solve_quadratic(&s, &d, None).unwrap();
        for (w, d) in ws.w.iter().zip(&d) {
            assert_abs_diff_eq!(*w, d * 25.0 / 10.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn collinear_columns_rejected() {
        let f = SampleFrame::with_weights(vec![1.0; 3])
            .with_auxiliary("x", vec![1.0, 2.0, 3.0])
            .unwrap()
            .with_auxiliary("z", vec![2.0, 4.0, 6.0])
            .unwrap();
        let s = build_system(&f, &TargetSpec::new(3.0).total("x", 7.0).total("z", 14.0)).unwrap();
        match solve_quadratic(&s, f.design_weights(), None) {
            Err(CalibError::RankDeficient { columns }) => {
                assert_eq!(columns, vec!["total(x)".to_string(), "total(z)".to_string()])
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn q_scales_the_adjustment() {
        let f = SampleFrame::with_weights(vec![1.0, 1.0]).with_auxiliary("x", vec![1.0, 2.0]).unwrap();
        let s = build_system(&f, &TargetSpec::new(2.0).total("x", 4.0)).unwrap();
        let ws = solve_quadratic(&s, f.design_weights(), Some(&[2.0, 1.0])).unwrap();
        // gram = 2*1 + 1*4 = 6, coef = 1/6, w = 1 + q x / 6
        assert_abs_diff_eq!(ws.w[0], 1.0 + 2.0 / 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ws.w[1], 1.0 + 2.0 / 6.0, epsilon = 1e-14);
    }
}
