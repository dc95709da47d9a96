use jointcal::constraints::quantile_pseudo_variable;
use jointcal::domain::{SampleFrame, TargetSpec};
use jointcal::estimators::est_total;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random frame with `n` units, positive design weights and `p` continuous
/// auxiliaries named `x0..`.
pub fn random_frame(rng: &mut ChaCha8Rng, n: usize, p: usize) -> SampleFrame {
    let d: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..5.0)).collect();
    let mut frame = SampleFrame::with_weights(d);
    for j in 0..p {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0f64).powf(1.0 + 0.3 * j as f64)).collect();
        frame = frame.with_auxiliary(format!("x{j}"), x).unwrap();
    }
    frame
}

/// Targets met exactly by `w_true = d * u`, `u ~ U(0.6, 1.6)`: size, the
/// first `totals` auxiliaries, and a quantile at a random interior point of
/// each of the first `quantiles` auxiliaries.
pub fn feasible_targets(rng: &mut ChaCha8Rng, frame: &SampleFrame, totals: usize, quantiles: usize) -> TargetSpec {
    let w: Vec<f64> = frame.design_weights().iter().map(|d| d * rng.random_range(0.6..1.6)).collect();
    let big_n: f64 = w.iter().sum();
    let mut t = TargetSpec::new(big_n).with_size();
    for j in 0..totals {
        let x = frame.auxiliary(&format!("x{j}")).unwrap();
        t = t.total(format!("x{j}"), est_total(&w, x).unwrap());
    }
    for j in 0..quantiles {
        let x = frame.auxiliary(&format!("x{j}")).unwrap();
        let mut sorted = x.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let lo = sorted[n / 4];
        let hi = sorted[3 * n / 4];
        let q = rng.random_range(lo..hi);
        let a = quantile_pseudo_variable(x, q, big_n).unwrap();
        let alpha = est_total(&w, &a).unwrap();
        t = t.quantile(format!("x{j}"), alpha, q);
    }
    t
}
