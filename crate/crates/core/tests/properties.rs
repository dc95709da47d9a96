//! Solver invariants over random feasible calibration problems.

mod common;

use common::{feasible_targets, random_frame};
use jointcal::constraints::{build_system, quantile_pseudo_variable, ConstraintSystem};
use jointcal::domain::{DistanceSpec, SampleFrame, TargetSpec};
use jointcal::estimators::est_total;
use jointcal::interp_cdf::interp_cdf;
use jointcal::solvers::{el_centered_constraints, solve_dual, solve_el, solve_quadratic, Distance, SolverOptions};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    frame: SampleFrame,
    targets: TargetSpec,
    system: ConstraintSystem,
}

fn instance(seed: u64, totals: usize, quantiles: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(12..=40);
    let frame = random_frame(&mut rng, n, 3);
    let targets = feasible_targets(&mut rng, &frame, totals, quantiles);
    let system = build_system(&frame, &targets).unwrap();
    Instance { frame, targets, system }
}

fn objective(distance: Distance, d: &[f64], w: &[f64]) -> f64 {
    d.iter().zip(w).map(|(d, w)| d * distance.g(w / d)).sum()
}

/// Random direction in the null space of `A^T`.
fn null_direction(a: &DMatrix<f64>, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = DVector::from_fn(a.nrows(), |_, _| rng.random_range(-1.0..1.0));
    let gram = a.tr_mul(a);
    let coef = gram.cholesky().expect("full column rank").solve(&a.tr_mul(&e));
    (e - a * coef).iter().copied().collect()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(1.0)).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_form_meets_targets(seed in any::<u64>(), totals in 0usize..=3, quantiles in 0usize..=3) {
        let inst = instance(seed, totals, quantiles);
        let ws = solve_quadratic(&inst.system, inst.frame.design_weights(), None).unwrap();
        prop_assert!(inst.system.max_rel_residual(&ws.w).unwrap() <= 1e-9);
    }

    #[test]
    fn solution_minimizes_distance(seed in any::<u64>(), totals in 0usize..=2, quantiles in 0usize..=2, which in 0usize..3) {
        let inst = instance(seed, totals, quantiles);
        let (spec, distance) = match which {
            0 => (DistanceSpec::quadratic(), Distance::Quadratic),
            1 => (DistanceSpec::raking(), Distance::Raking),
            _ => (DistanceSpec::logit(0.2, 3.0), Distance::Logit { lower: 0.2, upper: 3.0 }),
        };
        let d = inst.frame.design_weights();
        let ws = solve_dual(&inst.system, d, &spec, &SolverOptions::default()).unwrap();
        prop_assert!(ws.converged());
        let best = objective(distance, d, &ws.w);
        let dir = null_direction(&inst.system.a, seed ^ 0x5eed);
        for step in [1e-3, 1e-2, 0.1] {
            let v: Vec<f64> = ws.w.iter().zip(&dir).map(|(w, e)| w + step * e).collect();
            let other = objective(distance, d, &v);
            if other.is_finite() {
                prop_assert!(other >= best - 1e-10 * (1.0 + best), "step {step}: {other} < {best}");
            }
        }
    }

    #[test]
    fn rescaling_preserves_solutions(seed in any::<u64>(), totals in 1usize..=3, quantiles in 1usize..=3) {
        let inst = instance(seed, totals, quantiles);
        let d = inst.frame.design_weights();
        let base = solve_quadratic(&inst.system, d, None).unwrap();
        let raked = solve_dual(&inst.system, d, &DistanceSpec::raking(), &SolverOptions::default()).unwrap();
        for c in [10.0, 1000.0, 1e5] {
            let scaled = inst.system.rescale(c);
            let w = solve_quadratic(&scaled, d, None).unwrap().w;
            prop_assert!(max_rel(&base.w, &w) <= 1e-9, "c = {c}");
            let r = solve_dual(&scaled, d, &DistanceSpec::raking(), &SolverOptions::default()).unwrap();
            prop_assert!(max_rel(&raked.w, &r.w) <= 1e-7, "raking, c = {c}");
        }
    }

    #[test]
    fn raked_weights_reproduce_totals_and_quantiles(seed in any::<u64>(), totals in 0usize..=3, quantiles in 1usize..=3) {
        let inst = instance(seed, totals, quantiles);
        let ws = solve_dual(&inst.system, inst.frame.design_weights(), &DistanceSpec::raking(), &SolverOptions::default()).unwrap();
        prop_assert!(ws.converged());
        prop_assert!(ws.w.iter().all(|&w| w > 0.0));
        let big_n = inst.targets.population_size;
        let sum: f64 = ws.w.iter().sum();
        for t in &inst.targets.totals {
            let x = inst.frame.auxiliary(&t.variable).unwrap();
            let got = est_total(&ws.w, x).unwrap();
            prop_assert!((got - t.value).abs() <= 1e-8 * t.value.abs().max(1.0));
        }
        for q in &inst.targets.quantiles {
            let x = inst.frame.auxiliary(&q.variable).unwrap();
            let f = interp_cdf(x, &ws.w, q.value).unwrap();
            prop_assert!((f * sum / big_n - q.alpha).abs() <= 1e-8, "{} vs {}", f * sum / big_n, q.alpha);
        }
    }

    #[test]
    fn el_weights_bridge_to_calibration(seed in any::<u64>(), totals in 0usize..=2, quantiles in 1usize..=2) {
        let inst = instance(seed, totals, quantiles);
        let u = el_centered_constraints(&inst.frame, &inst.targets).unwrap();
        let el = solve_el(&u, &SolverOptions::default()).unwrap();
        prop_assume!(el.converged);
        let big_n = inst.targets.population_size;
        let w: Vec<f64> = el.p.iter().map(|p| big_n * p).collect();
        let sum: f64 = w.iter().sum();
        prop_assert!((sum - big_n).abs() <= 1e-12 * big_n);
        for q in &inst.targets.quantiles {
            let x = inst.frame.auxiliary(&q.variable).unwrap();
            let a = quantile_pseudo_variable(x, q.value, big_n).unwrap();
            prop_assert!((est_total(&w, &a).unwrap() - q.alpha).abs() <= 1e-8);
        }
    }
}
