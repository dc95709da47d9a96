//! Shared domain types: the sample frame, calibration targets, distance
//! specification and the calibrated weight set, plus frame/target validation
//! and the seed-derivation contract used by every stochastic routine.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};

/// A named numeric column of a [`SampleFrame`].
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

/// Sampled units with their design weights, auxiliary variables and
/// (optionally) study variables. Row order is the canonical unit order used
/// by every downstream matrix.
///
/// Construction only checks that lengths agree; the remaining invariants are
/// reported by [`validate_frame`] so that invalid inputs can be diagnosed
/// rather than rejected opaquely.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFrame {
    ids: Vec<String>,
    design_weights: Vec<f64>,
    auxiliary: Vec<Column>,
    study: Vec<Column>,
}

impl SampleFrame {
    pub fn new(ids: Vec<String>, design_weights: Vec<f64>) -> Result<Self> {
        if ids.len() != design_weights.len() {
            return Err(CalibError::LengthMismatch {
                expected: ids.len(),
                got: design_weights.len(),
            });
        }
        Ok(Self {
            ids,
            design_weights,
            auxiliary: Vec::new(),
            study: Vec::new(),
        })
    }

    /// Frame with ids `1..=n`.
    pub fn with_weights(design_weights: Vec<f64>) -> Self {
        let ids = (1..=design_weights.len()).map(|i| i.to_string()).collect();
        Self {
            ids,
            design_weights,
            auxiliary: Vec::new(),
            study: Vec::new(),
        }
    }

    pub fn with_auxiliary(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        self.check_len(values.len())?;
        self.auxiliary.push(Column {
            name: name.into(),
            values,
        });
        Ok(self)
    }

    pub fn with_study(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        self.check_len(values.len())?;
        self.study.push(Column {
            name: name.into(),
            values,
        });
        Ok(self)
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.len() {
            return Err(CalibError::LengthMismatch {
                expected: self.len(),
                got,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.design_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.design_weights.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn design_weights(&self) -> &[f64] {
        &self.design_weights
    }

    pub fn auxiliary_columns(&self) -> &[Column] {
        &self.auxiliary
    }

    pub fn study_columns(&self) -> &[Column] {
        &self.study
    }

    pub fn auxiliary(&self, name: &str) -> Option<&[f64]> {
        self.auxiliary
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn study(&self, name: &str) -> Option<&[f64]> {
        self.study
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalTarget {
    pub variable: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTarget {
    pub variable: String,
    pub alpha: f64,
    pub value: f64,
}

/// Known population information the weights must reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub population_size: f64,
    pub totals: Vec<TotalTarget>,
    pub quantiles: Vec<QuantileTarget>,
    pub include_size_constraint: bool,
}

impl TargetSpec {
    pub fn new(population_size: f64) -> Self {
        Self {
            population_size,
            totals: Vec::new(),
            quantiles: Vec::new(),
            include_size_constraint: false,
        }
    }

    pub fn with_size(mut self) -> Self {
        self.include_size_constraint = true;
        self
    }

    pub fn total(mut self, variable: impl Into<String>, value: f64) -> Self {
        self.totals.push(TotalTarget {
            variable: variable.into(),
            value,
        });
        self
    }

    pub fn quantile(mut self, variable: impl Into<String>, alpha: f64, value: f64) -> Self {
        self.quantiles.push(QuantileTarget {
            variable: variable.into(),
            alpha,
            value,
        });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    Quadratic,
    Raking,
    Logit,
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistanceKind::Quadratic => write!(f, "quadratic"),
            DistanceKind::Raking => write!(f, "raking"),
            DistanceKind::Logit => write!(f, "logit"),
        }
    }
}

/// Range restriction `lower <= w_k / d_k <= upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSpec {
    pub kind: DistanceKind,
    pub bounds: Option<Bounds>,
    /// Per-unit scale factors; `None` means all ones.
    pub q: Option<Vec<f64>>,
}

impl DistanceSpec {
    pub fn quadratic() -> Self {
        Self {
            kind: DistanceKind::Quadratic,
            bounds: None,
            q: None,
        }
    }

    pub fn raking() -> Self {
        Self {
            kind: DistanceKind::Raking,
            bounds: None,
            q: None,
        }
    }

    pub fn logit(lower: f64, upper: f64) -> Self {
        Self {
            kind: DistanceKind::Logit,
            bounds: Some(Bounds { lower, upper }),
            q: None,
        }
    }

    pub fn with_q(mut self, q: Vec<f64>) -> Self {
        self.q = Some(q);
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match (self.kind, self.bounds) {
            (DistanceKind::Logit, None) => {
                return Err(CalibError::InvalidDistance(
                    "logit distance requires bounds".into(),
                ))
            }
            (DistanceKind::Logit, Some(b)) => {
                if !(b.lower >= 0.0 && b.lower < 1.0 && b.upper > 1.0 && b.upper.is_finite()) {
                    return Err(CalibError::InvalidDistance(format!(
                        "logit bounds must satisfy 0 <= L < 1 < U, got L={}, U={}",
                        b.lower, b.upper
                    )));
                }
            }
            (kind, Some(_)) => {
                return Err(CalibError::InvalidDistance(format!(
                    "{kind} distance does not take bounds; use logit for bounded weights"
                )))
            }
            _ => {}
        }
        if let Some(q) = &self.q {
            if q.len() != n {
                return Err(CalibError::LengthMismatch {
                    expected: n,
                    got: q.len(),
                });
            }
            if let Some(k) = q.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(CalibError::InvalidDistance(format!(
                    "scale factor q at index {} must be positive",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    pub fn q_at(&self, k: usize) -> f64 {
        self.q.as_ref().map_or(1.0, |q| q[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub max_abs_residual: f64,
    /// Largest `|r_j| / max(1, |h_j|)` over constraints.
    pub max_rel_residual: f64,
    pub iterations: usize,
    pub distance_value: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub converged: bool,
    pub message: Option<String>,
}

/// Calibrated weights together with solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub w: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl WeightSet {
    pub fn converged(&self) -> bool {
        self.diagnostics.converged
    }
}

/// One violated invariant found by [`validate_frame`]. Unit indices are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyFrame,
    NonPositiveDesignWeight { index: usize, value: f64 },
    DuplicateColumn(String),
    MissingValue { column: String, index: usize },
    NonPositivePopulation(f64),
    OrderOutOfRange { variable: String, alpha: f64 },
    DuplicateQuantile { variable: String, alpha: f64 },
    UnknownVariable(String),
    NonFiniteTarget(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyFrame => write!(f, "sample frame has no units"),
            Violation::NonPositiveDesignWeight { index, value } => {
                write!(f, "non-positive design weight {value} at index {index}")
            }
            Violation::DuplicateColumn(name) => write!(f, "duplicate column name `{name}`"),
            Violation::MissingValue { column, index } => {
                write!(f, "missing value in column `{column}` at index {index}")
            }
            Violation::NonPositivePopulation(n) => {
                write!(f, "population size must be positive, got {n}")
            }
            Violation::OrderOutOfRange { variable, alpha } => {
                write!(f, "quantile order {alpha} for `{variable}` is outside (0, 1)")
            }
            Violation::DuplicateQuantile { variable, alpha } => {
                write!(f, "duplicate quantile target for `{variable}` at order {alpha}")
            }
            Violation::UnknownVariable(name) => {
                write!(f, "target references unknown variable `{name}`")
            }
            Violation::NonFiniteTarget(what) => write!(f, "non-finite target value for {what}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            let msg = self
                .violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            Err(CalibError::InvalidInput(msg))
        }
    }
}

/// Lists every invariant of `frame` and `targets` that does not hold.
pub fn validate_frame(frame: &SampleFrame, targets: &TargetSpec) -> ValidationReport {
    let mut violations = Vec::new();

    if frame.is_empty() {
        violations.push(Violation::EmptyFrame);
    }
    for (k, &d) in frame.design_weights().iter().enumerate() {
        if !(d > 0.0 && d.is_finite()) {
            violations.push(Violation::NonPositiveDesignWeight {
                index: k + 1,
                value: d,
            });
        }
    }

    let mut seen = HashSet::new();
    for col in frame.auxiliary_columns().iter().chain(frame.study_columns()) {
        if !seen.insert(col.name.as_str()) {
            violations.push(Violation::DuplicateColumn(col.name.clone()));
        }
    }

    if !(targets.population_size > 0.0 && targets.population_size.is_finite()) {
        violations.push(Violation::NonPositivePopulation(targets.population_size));
    }

    let mut referenced: Vec<&str> = Vec::new();
    for t in &targets.totals {
        if !t.value.is_finite() {
            violations.push(Violation::NonFiniteTarget(format!("total of `{}`", t.variable)));
        }
        referenced.push(&t.variable);
    }
    let mut quantile_keys: Vec<(&str, f64)> = Vec::new();
    for q in &targets.quantiles {
        if !(q.alpha > 0.0 && q.alpha < 1.0) {
            violations.push(Violation::OrderOutOfRange {
                variable: q.variable.clone(),
                alpha: q.alpha,
            });
        }
        if !q.value.is_finite() {
            violations.push(Violation::NonFiniteTarget(format!(
                "quantile {} of `{}`",
                q.alpha, q.variable
            )));
        }
        if quantile_keys
            .iter()
            .any(|&(v, a)| v == q.variable && a == q.alpha)
        {
            violations.push(Violation::DuplicateQuantile {
                variable: q.variable.clone(),
                alpha: q.alpha,
            });
        }
        quantile_keys.push((&q.variable, q.alpha));
        referenced.push(&q.variable);
    }

    let mut checked = HashSet::new();
    for name in referenced {
        if !checked.insert(name) {
            continue;
        }
        match frame.auxiliary(name) {
            None => violations.push(Violation::UnknownVariable(name.to_string())),
            Some(values) => {
                if let Some(k) = values.iter().position(|v| !v.is_finite()) {
                    violations.push(Violation::MissingValue {
                        column: name.to_string(),
                        index: k + 1,
                    });
                }
            }
        }
    }

    ValidationReport { violations }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `index` of a run seeded with `master`. Pure function of its
/// arguments, so replication `r` draws the same numbers regardless of
/// scheduling.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> SampleFrame {
        SampleFrame::with_weights(vec![1.0, 1.0])
            .with_auxiliary("x", vec![1.0, 2.0])
            .unwrap()
    }

    #[test]
    fn valid_inputs_give_empty_report() {
        let targets = TargetSpec::new(10.0).total("x", 3.0);
        assert!(validate_frame(&frame(), &targets).is_empty());
    }

    #[test]
    fn flags_zero_design_weight_with_one_based_index() {
        let f = SampleFrame::with_weights(vec![1.0, 0.0])
            .with_auxiliary("x", vec![1.0, 2.0])
            .unwrap();
        let report = validate_frame(&f, &TargetSpec::new(10.0).total("x", 3.0));
        assert_eq!(
            report.violations,
            vec![Violation::NonPositiveDesignWeight {
                index: 2,
                value: 0.0
            }]
        );
    }

    #[test]
    fn flags_order_outside_unit_interval() {
        let report = validate_frame(&frame(), &TargetSpec::new(10.0).quantile("x", 1.0, 1.5));
        assert_eq!(
            report.violations,
            vec![Violation::OrderOutOfRange {
                variable: "x".into(),
                alpha: 1.0
            }]
        );
    }

    #[test]
    fn each_violation_detected_singly() {
        let empty = SampleFrame::with_weights(vec![]);
        assert!(validate_frame(&empty, &TargetSpec::new(1.0))
            .violations
            .contains(&Violation::EmptyFrame));

        let dup = frame().with_study("x", vec![0.0, 0.0]).unwrap();
        assert_eq!(
            validate_frame(&dup, &TargetSpec::new(1.0)).violations,
            vec![Violation::DuplicateColumn("x".into())]
        );

        let nan = SampleFrame::with_weights(vec![1.0, 1.0])
            .with_auxiliary("x", vec![1.0, f64::NAN])
            .unwrap();
        assert_eq!(
            validate_frame(&nan, &TargetSpec::new(1.0).total("x", 1.0)).violations,
            vec![Violation::MissingValue {
                column: "x".into(),
                index: 2
            }]
        );
        // unreferenced missing values are fine
        assert!(validate_frame(&nan, &TargetSpec::new(1.0)).is_empty());

        assert_eq!(
            validate_frame(&frame(), &TargetSpec::new(0.0)).violations,
            vec![Violation::NonPositivePopulation(0.0)]
        );
        assert_eq!(
            validate_frame(&frame(), &TargetSpec::new(1.0).total("z", 1.0)).violations,
            vec![Violation::UnknownVariable("z".into())]
        );
        let dq = TargetSpec::new(1.0)
            .quantile("x", 0.5, 1.0)
            .quantile("x", 0.5, 1.2);
        assert_eq!(
            validate_frame(&frame(), &dq).violations,
            vec![Violation::DuplicateQuantile {
                variable: "x".into(),
                alpha: 0.5
            }]
        );
    }

    #[test]
    fn validation_is_repeatable() {
        let f = SampleFrame::with_weights(vec![-1.0, 1.0]);
        let t = TargetSpec::new(-3.0).quantile("q", 2.0, 0.0);
        assert_eq!(validate_frame(&f, &t), validate_frame(&f, &t));
    }

    #[test]
    fn distance_validation() {
        assert!(DistanceSpec::logit(0.5, 2.0).validate(3).is_ok());
        assert!(DistanceSpec::logit(1.0, 2.0).validate(3).is_err());
        assert!(DistanceSpec::logit(0.5, 1.0).validate(3).is_err());
        let mut bounded_raking = DistanceSpec::raking();
        bounded_raking.bounds = Some(Bounds {
            lower: 0.5,
            upper: 2.0,
        });
        assert!(bounded_raking.validate(3).is_err());
        assert!(DistanceSpec::raking()
            .with_q(vec![1.0, 0.0, 1.0])
            .validate(3)
            .is_err());
        assert!(DistanceSpec::quadratic()
            .with_q(vec![1.0, 1.0])
            .validate(3)
            .is_err());
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(42, 7), derive_seed(42, 7));
        let seeds: HashSet<u64> = (0..1000).map(|r| derive_seed(42, r)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }
}
