//! Calibration weighting that reproduces known population totals and
//! quantiles of auxiliary variables with a single weight vector.
//!
//! Quantile benchmarks become linear constraints through interpolated-CDF
//! pseudo-variables, so they stack with totals in one system solved under a
//! chosen distance (quadratic, raking, logit) or by empirical likelihood.
//! The crate also carries the estimators built on those weights, a logistic
//! propensity model for inverse probability weighting, and a design-based
//! Monte Carlo harness.

// `!(x > 0.0)` is the NaN-rejecting form used throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints;
pub mod domain;
pub mod error;
pub mod estimators;
pub mod interp_cdf;
pub mod propensity;
pub mod simulation;
pub mod solvers;

pub use constraints::{build_system, quantile_pseudo_variable, ConstraintKind, ConstraintSystem};
pub use domain::{
    derive_seed, validate_frame, Bounds, DistanceKind, DistanceSpec, SampleFrame, TargetSpec, ValidationReport,
    WeightSet,
};
pub use error::{CalibError, Result};
pub use solvers::{el_centered_constraints, solve_dual, solve_el, solve_quadratic, ELWeights, SolverOptions};
