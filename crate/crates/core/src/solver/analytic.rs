use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{norm_sq, MetricSpec};
use crate::solver::DomainSpec;

/// Closed-form positive solutions of `u_t = Δu` with known derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalyticKind {
    /// `(4πt)^{−n/2} exp(−|x|²/4t)` in `ℝⁿ`.
    GaussKernel { dim: usize },
    /// `10 + ε e^{x₁ + t}`.
    ExpExample { epsilon: f64 },
    /// `x₁ + 2` on the Poincaré disk of parameter λ (harmonic for any conformal metric in 2-D).
    PoincareHarmonic { lambda: f64 },
    /// `u ≡ c`.
    Constant { value: f64 },
}

impl AnalyticKind {
    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        match *self {
            Self::GaussKernel { dim } => (4.0 * PI * t).powf(-(dim as f64) / 2.0) * (-norm_sq(x) / (4.0 * t)).exp(),
            Self::ExpExample { epsilon } => 10.0 + epsilon * (x[0] + t).exp(),
            Self::PoincareHarmonic { .. } => x[0] + 2.0,
            Self::Constant { value } => value,
        }
    }

    /// Flat partial derivatives `∂ᵢu`.
    pub fn gradient(&self, x: &[f64], t: f64) -> Vec<f64> {
        match *self {
            Self::GaussKernel { .. } => {
                let u = self.value(x, t);
                x.iter().map(|xi| -xi / (2.0 * t) * u).collect()
            }
            Self::ExpExample { epsilon } => {
                let mut g = vec![0.0; x.len()];
                g[0] = epsilon * (x[0] + t).exp();
                g
            }
            Self::PoincareHarmonic { .. } => {
                let mut g = vec![0.0; x.len()];
                g[0] = 1.0;
                g
            }
            Self::Constant { .. } => vec![0.0; x.len()],
        }
    }

    pub fn flat_laplacian(&self, x: &[f64], t: f64) -> f64 {
        match *self {
            Self::GaussKernel { dim } => (norm_sq(x) / (4.0 * t * t) - dim as f64 / (2.0 * t)) * self.value(x, t),
            Self::ExpExample { epsilon } => epsilon * (x[0] + t).exp(),
            Self::PoincareHarmonic { .. } | Self::Constant { .. } => 0.0,
        }
    }

    pub fn time_derivative(&self, x: &[f64], t: f64) -> f64 {
        match *self {
            Self::GaussKernel { .. } | Self::ExpExample { .. } => self.flat_laplacian(x, t),
            Self::PoincareHarmonic { .. } | Self::Constant { .. } => 0.0,
        }
    }

    pub fn validate(&self, domain: &DomainSpec, metric: &MetricSpec) -> Result<()> {
        match *self {
            Self::GaussKernel { dim } => {
                if !metric.is_euclidean() || metric.dim() != dim {
                    return Err(Error::Mismatch(format!(
                        "Gauss kernel in dimension {dim} needs the flat metric of that dimension"
                    )));
                }
                if domain.t_start() <= 0.0 {
                    return Err(invalid(
                        "t0",
                        format!("Gauss kernel needs t > 0 on the window, starts at {}", domain.t_start()),
                    ));
                }
            }
            Self::ExpExample { epsilon } => {
                if !(epsilon > 0.0 && epsilon < 1.0) {
                    return Err(invalid("epsilon", format!("must lie in (0,1), got {epsilon}")));
                }
                if !metric.is_euclidean() {
                    return Err(Error::Mismatch("the exponential example is caloric only for the flat metric".into()));
                }
            }
            Self::PoincareHarmonic { lambda } => {
                if metric.poincare_lambda() != Some(lambda) {
                    return Err(Error::Mismatch(format!(
                        "harmonic example needs the Poincaré metric with λ = {lambda}"
                    )));
                }
            }
            Self::Constant { value } => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(invalid("value", format!("constant must be positive, got {value}")));
                }
            }
        }
        Ok(())
    }

    /// Exact `(inf, sup)` over the closed cylinder.
    pub fn exact_range(&self, domain: &DomainSpec, metric: &MetricSpec) -> Result<(f64, f64)> {
        self.validate(domain, metric)?;
        let (ts, t0) = (domain.t_start(), domain.t0);
        Ok(match *self {
            Self::GaussKernel { dim } => {
                let n = dim as f64;
                let c = norm_sq(&domain.x0).sqrt();
                let r_min = (c - domain.radius).max(0.0);
                let r_max = c + domain.radius;
                let at = |r: f64, t: f64| (4.0 * PI * t).powf(-n / 2.0) * (-r * r / (4.0 * t)).exp();
                // r²/4t + (n/2) ln t has a single critical point t = r²/(2n), a minimum
                let t_star = (r_min * r_min / (2.0 * n)).clamp(ts, t0);
                (at(r_max, ts).min(at(r_max, t0)), at(r_min, t_star))
            }
            Self::ExpExample { epsilon } => (
                10.0 + epsilon * (domain.x0[0] - domain.radius + ts).exp(),
                10.0 + epsilon * (domain.x0[0] + domain.radius + t0).exp(),
            ),
            Self::PoincareHarmonic { lambda } => {
                let (cx, rad) = poincare_ball_disk(&domain.x0, domain.radius, lambda);
                (cx[0] - rad + 2.0, cx[0] + rad + 2.0)
            }
            Self::Constant { value } => (value, value),
        })
    }
}

/// Euclidean center and radius of a Poincaré geodesic ball.
fn poincare_ball_disk(x0: &[f64], r: f64, lambda: f64) -> ([f64; 2], f64) {
    let re = (r / (2.0 * lambda)).tanh();
    let a2 = x0[0] * x0[0] + x0[1] * x0[1];
    let den = 1.0 - a2 * re * re;
    let s = (1.0 - re * re) / den;
    ([x0[0] * s, x0[1] * s], re * (1.0 - a2) / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_value_example() {
        let g = AnalyticKind::GaussKernel { dim: 2 };
        let v = g.value(&[1.0, 0.0], 1.0);
        assert!((v - (-0.25f64).exp() / (4.0 * PI)).abs() < 1e-16);
    }

    #[test]
    fn gauss_log_gradient() {
        let g = AnalyticKind::GaussKernel { dim: 3 };
        let x = [0.3, -0.2, 0.7];
        let t = 0.4;
        let grad = g.gradient(&x, t);
        let ratio = norm_sq(&grad).sqrt() / g.value(&x, t);
        assert!((ratio - norm_sq(&x).sqrt() / (2.0 * t)).abs() < 1e-12);
    }

    #[test]
    fn exp_example_range() {
        let d = DomainSpec::new(vec![0.0, 0.0], 1.0, 1.0, 1.0, 0.5, 0.5).unwrap();
        let m = MetricSpec::euclidean(2).unwrap();
        let (lo, hi) = AnalyticKind::ExpExample { epsilon: 0.01 }.exact_range(&d, &m).unwrap();
        assert!(lo > 10.0 - 0.01 * 2f64.exp() && hi < 10.0 + 0.01 * 2f64.exp() + 1e-12);
        assert!(lo > 1.0 && hi < 19.0);
    }

    #[test]
    fn poincare_range_near_whole_disk() {
        let m = MetricSpec::poincare(1.0).unwrap();
        let d = DomainSpec::new(vec![0.0, 0.0], 40.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        let (lo, hi) = AnalyticKind::PoincareHarmonic { lambda: 1.0 }.exact_range(&d, &m).unwrap();
        assert!((hi - 3.0).abs() < 1e-12 && (lo - 1.0).abs() < 1e-12);
    }

    #[test]
    fn poincare_ball_disk_matches_circle_samples() {
        let m = MetricSpec::poincare(0.7).unwrap();
        let x0 = [0.3, -0.4];
        let (c, rad) = poincare_ball_disk(&x0, 0.9, 0.7);
        for p in m.geodesic_circle(&x0, 0.9, 64).unwrap() {
            let e = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
            assert!((e - rad).abs() < 1e-12);
        }
    }

    #[test]
    fn gauss_sup_over_window() {
        let d = DomainSpec::new(vec![1.0, 0.0], 0.5, 1.0, 0.9, 0.25, 0.45).unwrap();
        let m = MetricSpec::euclidean(2).unwrap();
        let g = AnalyticKind::GaussKernel { dim: 2 };
        let (lo, hi) = g.exact_range(&d, &m).unwrap();
        let mut best: f64 = 0.0;
        let mut worst = f64::INFINITY;
        for i in 0..=200 {
            for j in 0..=200 {
                let t = d.t_start() + d.duration * j as f64 / 200.0;
                let ang = 2.0 * PI * i as f64 / 200.0;
                for r in [0.0, 0.25, 0.5] {
                    let x = [1.0 + r * ang.cos(), r * ang.sin()];
                    let v = g.value(&x, t);
                    best = best.max(v);
                    worst = worst.min(v);
                }
            }
        }
        assert!(best <= hi * (1.0 + 1e-12) && best > hi * 0.999);
        assert!(worst >= lo * (1.0 - 1e-12) && worst < lo * 1.001);
    }

    #[test]
    fn rejects_nonpositive_times() {
        let d = DomainSpec::new(vec![0.0, 0.0], 1.0, 0.5, 1.0, 0.5, 0.5).unwrap();
        let m = MetricSpec::euclidean(2).unwrap();
        assert!(AnalyticKind::GaussKernel { dim: 2 }.validate(&d, &m).is_err());
        assert!(AnalyticKind::ExpExample { epsilon: 1.5 }.validate(&d, &m).is_err());
    }
}
