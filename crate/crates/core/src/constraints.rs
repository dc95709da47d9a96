//! Assembly of the joint calibration system `A^T w = h`.
//!
//! Totals enter as their raw columns, the population size as a column of
//! ones, and every quantile target `(x, alpha, Q)` as a pseudo-variable whose
//! weighted sum equals the interpolated CDF of `x` at `Q` scaled by `N`.
//! Reproducing `alpha` for that column is then a linear constraint.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::domain::{validate_frame, SampleFrame, TargetSpec, Violation};
use crate::error::{CalibError, Result};
use crate::interp_cdf::{bracket, h_interp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Total,
    Size,
    Quantile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMeta {
    pub kind: ConstraintKind,
    pub variable: Option<String>,
    pub alpha: Option<f64>,
    /// Population total for total columns, `N` for the size column, the
    /// quantile value `Q` for quantile columns. Unaffected by rescaling.
    pub benchmark: f64,
}

impl fmt::Display for ColumnMeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let var = self.variable.as_deref().unwrap_or("");
        match self.kind {
            ConstraintKind::Total => write!(f, "total({var})"),
            ConstraintKind::Size => write!(f, "size"),
            ConstraintKind::Quantile => {
                write!(f, "quantile({var}, {})", self.alpha.unwrap_or(f64::NAN))
            }
        }
    }
}

/// Stacked calibration equations. Column `j` of `a` is the per-unit
/// constraint variable whose weighted sum must equal `h[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    pub a: DMatrix<f64>,
    pub h: DVector<f64>,
    pub columns: Vec<ColumnMeta>,
    pub scale: f64,
}

/// Quantile pseudo-variable: `1/N` for units at or below the lower bracket
/// of `q` in the sample, `beta/N` for units at the upper bracket, else 0.
pub fn quantile_pseudo_variable(x: &[f64], q: f64, population: f64) -> Result<Vec<f64>> {
    if !(population > 0.0) {
        return Err(CalibError::NonPositivePopulation(population));
    }
    let b = bracket(x, q)?;
    Ok(x.iter().map(|&v| h_interp(v, &b) / population).collect())
}

impl ConstraintSystem {
    /// Assembles a system from column vectors and metadata.
    pub fn from_columns(columns: Vec<(ColumnMeta, Vec<f64>, f64)>, n: usize) -> Result<Self> {
        let m = columns.len();
        let mut a = DMatrix::zeros(n, m);
        let mut h = DVector::zeros(m);
        let mut meta = Vec::with_capacity(m);
        for (j, (cm, values, target)) in columns.into_iter().enumerate() {
            if values.len() != n {
                return Err(CalibError::LengthMismatch {
                    expected: n,
                    got: values.len(),
                });
            }
            a.column_mut(j).copy_from_slice(&values);
            h[j] = target;
            meta.push(cm);
        }
        Ok(Self {
            a,
            h,
            columns: meta,
            scale: 1.0,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.ncols()
    }

    pub fn labels(&self) -> Vec<String> {
        self.columns.iter().map(ToString::to_string).collect()
    }

    /// Divides total and size equations by `c` and multiplies quantile
    /// equations by `c`. The solution set is unchanged.
    pub fn rescale(&self, c: f64) -> ConstraintSystem {
        let mut out = self.clone();
        for (j, cm) in self.columns.iter().enumerate() {
            let factor = match cm.kind {
                ConstraintKind::Total | ConstraintKind::Size => 1.0 / c,
                ConstraintKind::Quantile => c,
            };
            out.a.column_mut(j).scale_mut(factor);
            out.h[j] *= factor;
        }
        out.scale *= c;
        out
    }

    /// `A^T w - h` in the system's own scale.
    pub fn residuals(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.n() {
            return Err(CalibError::LengthMismatch {
                expected: self.n(),
                got: w.len(),
            });
        }
        let wv = DVector::from_column_slice(w);
        let r = self.a.tr_mul(&wv) - &self.h;
        Ok(r.iter().copied().collect())
    }

    /// Largest `|r_j| / max(1, |h_j|)`.
    pub fn max_rel_residual(&self, w: &[f64]) -> Result<f64> {
        let r = self.residuals(w)?;
        Ok(r.iter()
            .zip(self.h.iter())
            .map(|(r, h)| r.abs() / h.abs().max(1.0))
            .fold(0.0, f64::max))
    }
}

/// Builds the joint system with columns ordered
/// `[totals..., size, quantile pseudo-variables...]`.
pub fn build_system(frame: &SampleFrame, targets: &TargetSpec) -> Result<ConstraintSystem> {
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
    let mut cols = Vec::new();
    for t in &targets.totals {
        let x = frame
            .auxiliary(&t.variable)
            .ok_or_else(|| CalibError::MissingColumn(t.variable.clone()))?;
        cols.push((
            ColumnMeta {
                kind: ConstraintKind::Total,
                variable: Some(t.variable.clone()),
                alpha: None,
                benchmark: t.value,
            },
            x.to_vec(),
            t.value,
        ));
    }
    if targets.include_size_constraint {
        cols.push((
            ColumnMeta {
                kind: ConstraintKind::Size,
                variable: None,
                alpha: None,
                benchmark: population,
            },
            vec![1.0; n],
            population,
        ));
    }
    for q in &targets.quantiles {
        let x = frame
            .auxiliary(&q.variable)
            .ok_or_else(|| CalibError::MissingColumn(q.variable.clone()))?;
        cols.push((
            ColumnMeta {
                kind: ConstraintKind::Quantile,
                variable: Some(q.variable.clone()),
                alpha: Some(q.alpha),
                benchmark: q.value,
            },
            quantile_pseudo_variable(x, q.value, population)?,
            q.alpha,
        ));
    }
    ConstraintSystem::from_columns(cols, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn frame3() -> SampleFrame {
        SampleFrame::with_weights(vec![1.0, 1.0, 1.0])
            .with_auxiliary("x1", vec![4.0, 5.0, 6.0])
            .unwrap()
            .with_auxiliary("x2", vec![1.0, 2.0, 3.0])
            .unwrap()
    }

    #[test]
    fn pseudo_variable_examples() {
        let x = [1.0, 2.0, 3.0];
        let a = quantile_pseudo_variable(&x, 2.0, 3.0).unwrap();
        assert_eq!(a, vec![1.0 / 3.0, 1.0 / 3.0, 0.0]);
        let a = quantile_pseudo_variable(&x, 2.5, 3.0).unwrap();
        assert_abs_diff_eq!(a[2], 1.0 / 6.0, epsilon = 1e-15);
        assert_eq!(&a[..2], &[1.0 / 3.0, 1.0 / 3.0]);
        let a = quantile_pseudo_variable(&x, 3.0, 3.0).unwrap();
        assert_eq!(a, vec![1.0 / 3.0; 3]);
        assert!(quantile_pseudo_variable(&x, 3.0, 0.0).is_err());
    }

    #[test]
    fn totals_only() {
        let s = build_system(&frame3(), &TargetSpec::new(10.0).total("x1", 16.0)).unwrap();
        assert_eq!(s.m(), 1);
        assert_eq!(s.a.column(0).as_slice(), &[4.0, 5.0, 6.0]);
        assert_eq!(s.h.as_slice(), &[16.0]);
    }

    #[test]
    fn size_only() {
        let s = build_system(&frame3(), &TargetSpec::new(10.0).with_size()).unwrap();
        assert_eq!(s.a.column(0).as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(s.h.as_slice(), &[10.0]);
        assert_eq!(s.columns[0].kind, ConstraintKind::Size);
    }

    #[test]
    fn joint_assembly_order() {
        let t = TargetSpec::new(3.0)
            .with_size()
            .total("x1", 15.0)
            .quantile("x2", 0.5, 2.5);
        let s = build_system(&frame3(), &t).unwrap();
        assert_eq!(s.m(), 3);
        assert_eq!(s.h.as_slice(), &[15.0, 3.0, 0.5]);
        assert_eq!(s.labels(), vec!["total(x1)", "size", "quantile(x2, 0.5)"]);
        let a = s.a.column(2);
        assert_abs_diff_eq!(a[0], 1.0 / 3.0);
        assert_abs_diff_eq!(a[1], 1.0 / 3.0);
        assert_abs_diff_eq!(a[2], 0.5 / 3.0);
    }

    #[test]
    fn same_variable_in_totals_and_quantiles() {
        let t = TargetSpec::new(3.0).total("x2", 6.0).quantile("x2", 0.5, 2.0);
        let s = build_system(&frame3(), &t).unwrap();
        assert_eq!(s.m(), 2);
    }

    #[test]
    fn build_errors() {
        let dup = TargetSpec::new(3.0)
            .quantile("x2", 0.5, 2.0)
            .quantile("x2", 0.5, 2.1);
        assert!(matches!(
            build_system(&frame3(), &dup),
            Err(CalibError::DuplicateQuantile { .. })
        ));
        assert_eq!(
            build_system(&frame3(), &TargetSpec::new(3.0).total("nope", 1.0)),
            Err(CalibError::MissingColumn("nope".into()))
        );
        assert!(matches!(
            build_system(&frame3(), &TargetSpec::new(3.0).quantile("x2", 1.2, 1.0)),
            Err(CalibError::InvalidInput(_))
        ));
    }

    #[test]
    fn rescale_examples() {
        let t = TargetSpec::new(10.0).with_size();
        let s = build_system(&frame3(), &t).unwrap();
        assert_eq!(s.rescale(1.0), s);
        let r = s.rescale(1000.0);
        assert_abs_diff_eq!(r.h[0], 0.01);
        assert_abs_diff_eq!(r.a[(0, 0)], 1e-3);
        assert_eq!(r.scale, 1000.0);

        let q = build_system(&frame3(), &TargetSpec::new(3.0).quantile("x2", 0.5, 2.0)).unwrap();
        let r = q.rescale(3.0);
        assert_abs_diff_eq!(r.a[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.a[(1, 0)], 1.0, epsilon = 1e-15);
        assert_eq!(r.a[(2, 0)], 0.0);
        assert_abs_diff_eq!(r.h[0], 1.5);
    }

    #[test]
    fn residual_examples() {
        let f = SampleFrame::with_weights(vec![2.0, 3.0])
            .with_auxiliary("x", vec![1.0, 2.0])
            .unwrap();
        let s = build_system(&f, &TargetSpec::new(10.0).with_size()).unwrap();
        assert_eq!(s.residuals(&[2.0, 3.0]).unwrap(), vec![-5.0]);
        let s = build_system(&f, &TargetSpec::new(10.0).total("x", 3.0)).unwrap();
        assert_eq!(s.residuals(&[1.0, 1.0]).unwrap(), vec![0.0]);
        assert!(s.residuals(&[1.0]).is_err());

        // self-consistent targets
        let d = f.design_weights();
        let t = TargetSpec::new(5.0).with_size().total("x", 8.0);
        let s = build_system(&f, &t).unwrap();
        assert_eq!(s.residuals(d).unwrap(), vec![0.0, 0.0]);
    }
}
