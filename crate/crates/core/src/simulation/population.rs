use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{SimConfig, QUANTILE_ORDERS};
use crate::domain::derive_seed;
use crate::error::{CalibError, Result};
use crate::interp_cdf::quantile_of_sorted;
use crate::propensity::{logit, sigmoid};

/// Slopes of the true propensity model on `x1..x4`.
pub const PROPENSITY_SLOPES: [f64; 4] = [0.1, 0.2, 0.1, 0.2];

/// Known population quantities of one study variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Truths {
    pub mean: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

/// A fixed synthetic finite population.
#[derive(Debug, Clone)]
pub struct Population {
    /// `x1..x4`, one vector per variable.
    pub x: Vec<Vec<f64>>,
    /// One study variable per correlation target.
    pub y: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
    pub pi: Vec<f64>,
    pub sigma: Vec<f64>,
    pub theta0: f64,
    pub linpred: Vec<f64>,
    pub truths: Vec<Truths>,
    /// Totals of `x1..x4`.
    pub x_totals: Vec<f64>,
    /// Exact quantiles of `x2..x4` at [`QUANTILE_ORDERS`].
    pub x_quantiles: Vec<Vec<f64>>,
}

impl Population {
    pub fn size(&self) -> usize {
        self.pi.len()
    }
}

/// Noise scale giving `corr(l + sigma e, l) = rho` for unit-variance noise:
/// `sigma = sd(l) sqrt(1/rho^2 - 1)`, with the population standard deviation.
pub fn solve_sigma(linpred: &[f64], rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(CalibError::InvalidInput(format!("correlation {rho} must be in (0, 1]")));
    }
    let n = linpred.len() as f64;
    let mean = linpred.iter().sum::<f64>() / n;
    let var = linpred.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(CalibError::InvalidInput("linear predictor has zero variance".into()));
    }
    Ok(var.sqrt() * (1.0 / (rho * rho) - 1.0).sqrt())
}

/// Intercept `theta0` with `sum_k sigmoid(theta0 + offset_k) = n`, by
/// safeguarded Newton on a bracketing interval.
pub fn solve_theta0(offsets: &[f64], n: f64) -> Result<f64> {
    let big_n = offsets.len() as f64;
    if !(n > 0.0 && n < big_n) {
        return Err(CalibError::InvalidInput(format!(
            "expected sample size {n} must lie strictly between 0 and {big_n}"
        )));
    }
    let f = |t: f64| -> (f64, f64) {
        offsets.iter().fold((-n, 0.0), |(s, ds), &o| {
            let p = sigmoid(t + o);
            (s + p, ds + p * (1.0 - p))
        })
    };
    let base = logit(n / big_n);
    let max = offsets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = offsets.iter().cloned().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (base - max, base - min);
    let mut t = base - 0.5 * (max + min);
    for _ in 0..200 {
        let (v, dv) = f(t);
        if v.abs() <= 1e-9 * n.max(1.0) {
            return Ok(t);
        }
        if v < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t - v / dv;
        t = if dv > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 * (1.0 + t.abs()) {
            break;
        }
    }
    Ok(t)
}

/// Result of a Poisson draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonDraw {
    pub indices: Vec<usize>,
    /// Number of empty draws discarded before this one.
    pub redraws: usize,
}

/// Independent Bernoulli(`pi_k`) inclusion of every unit. An empty draw is
/// repeated with the next sub-seed.
pub fn poisson_sample(pi: &[f64], seed: u64) -> PoissonDraw {
    let mut redraws = 0;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, redraws as u64));
        let indices: Vec<usize> = pi
            .iter()
            .enumerate()
            .filter(|(_, &p)| rng.random::<f64>() < p)
            .map(|(k, _)| k)
            .collect();
        if !indices.is_empty() || pi.is_empty() || redraws >= 1000 {
            return PoissonDraw { indices, redraws };
        }
        redraws += 1;
    }
}

pub fn gen_population(cfg: &SimConfig, seed: u64) -> Result<Population> {
    cfg.validate()?;
    let big_n = cfg.population_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut x: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(big_n)).collect();
    for _ in 0..big_n {
        let z1 = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        let z2 = 2.0 * rng.random::<f64>();
        let z3 = -(1.0 - rng.random::<f64>()).ln();
        let z4: f64 = (0..4)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                e * e
            })
            .sum();
        let x1 = z1;
        let x2 = z2 + 0.3 * x1;
        let x3 = z3 + 0.2 * (x1 + x2);
        let x4 = z4 + 0.1 * (x1 + x2 + x3);
        for (col, v) in x.iter_mut().zip([x1, x2, x3, x4]) {
            col.push(v);
        }
    }

    let linpred: Vec<f64> = (0..big_n).map(|k| 2.0 + x[0][k] + x[1][k] + x[2][k] + x[3][k]).collect();
    let mut y = Vec::with_capacity(cfg.rho_list.len());
    let mut sigma = Vec::with_capacity(cfg.rho_list.len());
    for &rho in &cfg.rho_list {
        let s = solve_sigma(&linpred, rho)?;
        let col: Vec<f64> = linpred
            .iter()
            .map(|l| {
                let e: f64 = rng.sample(StandardNormal);
                l + s * e
            })
            .collect();
        sigma.push(s);
        y.push(col);
    }

    let offsets: Vec<f64> = (0..big_n)
        .map(|k| (0..4).map(|j| PROPENSITY_SLOPES[j] * x[j][k]).sum())
        .collect();
    let theta0 = solve_theta0(&offsets, cfg.sample_size as f64)?;
    let pi: Vec<f64> = offsets.iter().map(|o| sigmoid(theta0 + o)).collect();

    let truths = y
        .iter()
        .map(|col| {
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            Truths {
                mean: col.iter().sum::<f64>() / big_n as f64,
                q25: quantile_of_sorted(&sorted, 0.25),
                q50: quantile_of_sorted(&sorted, 0.5),
                q75: quantile_of_sorted(&sorted, 0.75),
            }
        })
        .collect();

    let x_totals = x.iter().map(|col| col.iter().sum()).collect();
    let x_quantiles = (1..4)
        .map(|j| {
            let mut sorted = x[j].clone();
            sorted.sort_by(f64::total_cmp);
            QUANTILE_ORDERS.iter().map(|&a| quantile_of_sorted(&sorted, a)).collect()
        })
        .collect();

    Ok(Population {
        x_totals,
        x_quantiles,
        x,
        y,
        rho: cfg.rho_list.clone(),
        pi,
        sigma,
        theta0,
        linpred,
        truths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sigma_examples() {
        // population sd of (-1, 1) is 1
        assert_abs_diff_eq!(solve_sigma(&[-1.0, 1.0], 0.5).unwrap(), 3f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(solve_sigma(&[-2.0, 2.0], 0.8).unwrap(), 1.5, epsilon = 1e-14);
        assert_eq!(solve_sigma(&[-1.0, 1.0], 1.0).unwrap(), 0.0);
        assert!(solve_sigma(&[-1.0, 1.0], 0.999999).unwrap() < 2e-3);
        assert!(solve_sigma(&[1.0, 1.0], 0.5).is_err());
        assert!(solve_sigma(&[-1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn theta0_examples() {
        assert_abs_diff_eq!(solve_theta0(&[0.0, 0.0], 1.0).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(solve_theta0(&[0.0; 4], 1.0).unwrap(), logit(0.25), epsilon = 1e-12);
        let offsets: Vec<f64> = (0..1000).map(|k| (k % 37) as f64 * 0.1).collect();
        let a = solve_theta0(&offsets, 300.0).unwrap();
        let b = solve_theta0(&offsets, 400.0).unwrap();
        assert!(b > a);
        let total: f64 = offsets.iter().map(|o| sigmoid(a + o)).sum();
        assert_abs_diff_eq!(total, 300.0, epsilon = 1e-6);
        assert!(solve_theta0(&offsets, 1000.0).is_err());
    }

    #[test]
    fn poisson_examples() {
        let full = poisson_sample(&[1.0 - 1e-12; 50], 3);
        assert_eq!(full.indices, (0..50).collect::<Vec<_>>());

        let half = vec![0.5; 20_000];
        let draw = poisson_sample(&half, 11);
        let size = draw.indices.len() as f64;
        assert!((size - 10_000.0).abs() <= 4.0 * (20_000.0f64 * 0.25).sqrt());
        assert_eq!(poisson_sample(&half, 11), draw);
        assert_ne!(poisson_sample(&half, 12), draw);
    }

    #[test]
    fn empty_draw_is_redrawn() {
        let draw = poisson_sample(&[0.02; 10], 5);
        assert!(!draw.indices.is_empty());
        // with P(empty) = 0.98^10 ~ 0.82 a redraw is almost certain for some seed
        let redrawn = (0..20).map(|s| poisson_sample(&[0.02; 10], s).redraws).sum::<usize>();
        assert!(redrawn > 0);
    }

    #[test]
    fn population_design() {
        let cfg = SimConfig {
            population_size: 20_000,
            sample_size: 10_000,
            ..SimConfig::default()
        };
        let pop = gen_population(&cfg, 2024).unwrap();
        let n = pop.size() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let sd_of_mean = |v: &[f64]| {
            let m = mean(v);
            (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
        };
        // E[x1] = 0.5, E[x2] = 1 + 0.3 * 0.5
        assert!((mean(&pop.x[0]) - 0.5).abs() < 4.0 * sd_of_mean(&pop.x[0]));
        assert!((mean(&pop.x[1]) - 1.15).abs() < 4.0 * sd_of_mean(&pop.x[1]));
        // E[x3] = 1 + 0.2 (0.5 + 1.15), E[x4] = 4 + 0.1 (0.5 + 1.15 + 1.33)
        assert!((mean(&pop.x[2]) - 1.33).abs() < 4.0 * sd_of_mean(&pop.x[2]));
        assert!((mean(&pop.x[3]) - 4.298).abs() < 4.0 * sd_of_mean(&pop.x[3]));

        let total_pi: f64 = pop.pi.iter().sum();
        assert_abs_diff_eq!(total_pi, 10_000.0, epsilon = 1e-6);
        assert!(pop.pi.iter().all(|&p| p > 0.0 && p < 1.0));

        for (j, &rho) in pop.rho.iter().enumerate() {
            let r = correlation(&pop.y[j], &pop.linpred);
            assert!((r - rho).abs() < 0.01, "rho {rho}: realized {r}");
        }
        assert!(pop.truths[2].q25 < pop.truths[2].q50 && pop.truths[2].q50 < pop.truths[2].q75);
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }
}
