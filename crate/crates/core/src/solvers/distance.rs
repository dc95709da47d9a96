//! Calibration distance functions `G` and the inverse `F` of their
//! derivatives. The dual solution of a calibration problem has weights
//! `w_k = d_k F(q_k x_k' lambda)`.

use crate::domain::{DistanceKind, DistanceSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distance {
    Quadratic,
    Raking,
    Logit { lower: f64, upper: f64 },
}

impl Distance {
    /// Assumes `spec` has already been validated.
    pub fn from_spec(spec: &DistanceSpec) -> Self {
        match spec.kind {
            DistanceKind::Quadratic => Distance::Quadratic,
            DistanceKind::Raking => Distance::Raking,
            DistanceKind::Logit => {
                let b = spec.bounds.expect("validated logit distance has bounds");
                Distance::Logit {
                    lower: b.lower,
                    upper: b.upper,
                }
            }
        }
    }

    fn logit_gamma(lower: f64, upper: f64) -> f64 {
        (upper - lower) / ((1.0 - lower) * (upper - 1.0))
    }

    /// `G(x)`; `+inf` outside the domain.
    pub fn g(&self, x: f64) -> f64 {
        match *self {
            Distance::Quadratic => 0.5 * (x - 1.0) * (x - 1.0),
            Distance::Raking => {
                if x > 0.0 {
                    x * x.ln() - x + 1.0
                } else if x == 0.0 {
                    1.0
                } else {
                    f64::INFINITY
                }
            }
            Distance::Logit { lower, upper } => {
                if x < lower || x > upper {
                    return f64::INFINITY;
                }
                let xlogy = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
                (xlogy(x - lower, 1.0 - lower) + xlogy(upper - x, upper - 1.0))
                    / Self::logit_gamma(lower, upper)
            }
        }
    }

    /// `G'(x)`.
    pub fn g_prime(&self, x: f64) -> f64 {
        match *self {
            Distance::Quadratic => x - 1.0,
            Distance::Raking => x.ln(),
            Distance::Logit { lower, upper } => {
                (((x - lower) / (1.0 - lower)).ln() - ((upper - x) / (upper - 1.0)).ln())
                    / Self::logit_gamma(lower, upper)
            }
        }
    }

    /// `F = (G')^{-1}`.
    pub fn f(&self, u: f64) -> f64 {
        match *self {
            Distance::Quadratic => 1.0 + u,
            Distance::Raking => u.exp(),
            Distance::Logit { lower, upper } => {
                let t = Self::logit_gamma(lower, upper) * u;
                let (a, b, c, e) = (lower * (upper - 1.0), upper * (1.0 - lower), upper - 1.0, 1.0 - lower);
                // divide through by exp(t) when it would overflow
                if t > 0.0 {
                    let s = (-t).exp();
                    (a * s + b) / (c * s + e)
                } else {
                    let s = t.exp();
                    (a + b * s) / (c + e * s)
                }
            }
        }
    }

    /// `F'(u)`.
    pub fn f_prime(&self, u: f64) -> f64 {
        match *self {
            Distance::Quadratic => 1.0,
            Distance::Raking => u.exp(),
            Distance::Logit { lower, upper } => {
                let gamma = Self::logit_gamma(lower, upper);
                let t = gamma * u;
                let (c, e) = (upper - 1.0, 1.0 - lower);
                let k = gamma * (upper - lower) * c * e;
                let s = (-t.abs()).exp();
                if t > 0.0 {
                    k * s / (c * s + e).powi(2)
                } else {
                    k * s / (c + e * s).powi(2)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all() -> [Distance; 4] {
        [
            Distance::Quadratic,
            Distance::Raking,
            Distance::Logit {
                lower: 0.5,
                upper: 2.0,
            },
            Distance::Logit {
                lower: 0.0,
                upper: 4.0,
            },
        ]
    }

    #[test]
    fn regularity_at_one() {
        let h = 1e-4;
        for d in all() {
            assert_eq!(d.g(1.0), 0.0, "{d:?}");
            let g1 = (d.g(1.0 + h) - d.g(1.0 - h)) / (2.0 * h);
            let g2 = (d.g(1.0 + h) - 2.0 * d.g(1.0) + d.g(1.0 - h)) / (h * h);
            assert!(g1.abs() < 1e-6, "{d:?}: G'(1) = {g1}");
            assert!((g2 - 1.0).abs() < 1e-6, "{d:?}: G''(1) = {g2}");
            assert!(d.g_prime(1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn f_inverts_g_prime() {
        for d in all() {
            let (lo, hi) = match d {
                Distance::Quadratic => (-3.0, 5.0),
                Distance::Raking => (0.05, 6.0),
                Distance::Logit { lower, upper } => (lower + 1e-3, upper - 1e-3),
            };
            for i in 0..=200 {
                let x = lo + (hi - lo) * i as f64 / 200.0;
                let back = d.f(d.g_prime(x));
                assert!((back - x).abs() < 1e-10, "{d:?}: F(G'({x})) = {back}");
            }
        }
    }

    #[test]
    fn f_prime_matches_difference_quotient() {
        for d in all() {
            for i in -20..=20 {
                let u = i as f64 * 0.1;
                let h = 1e-6;
                let fd = (d.f(u + h) - d.f(u - h)) / (2.0 * h);
                assert!((fd - d.f_prime(u)).abs() < 1e-6, "{d:?} at {u}");
            }
        }
    }

    #[test]
    fn logit_f_is_bounded_and_stable() {
        let d = Distance::Logit {
            lower: 0.5,
            upper: 2.0,
        };
        assert_eq!(d.f(0.0), 1.0);
        assert!((d.f(1e6) - 2.0).abs() < 1e-12);
        assert!((d.f(-1e6) - 0.5).abs() < 1e-12);
        assert!(d.f_prime(1e6).is_finite());
        for i in -100..=100 {
            let v = d.f(i as f64 * 0.3);
            assert!((0.5..=2.0).contains(&v));
        }
    }
}
