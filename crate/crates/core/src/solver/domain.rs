use serde::{Deserialize, Serialize};

use crate::cutoff::CutoffParams;
use crate::error::{invalid, Result};

/// The cylinder `Q_{R,T} = B(x₀, R) × [t₀ − T, t₀]` with cut-off margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub x0: Vec<f64>,
    pub radius: f64,
    pub t0: f64,
    pub duration: f64,
    pub rho: f64,
    pub delta: f64,
}

impl DomainSpec {
    pub fn new(x0: Vec<f64>, radius: f64, t0: f64, duration: f64, rho: f64, delta: f64) -> Result<Self> {
        let d = Self { x0, radius, t0, duration, rho, delta };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x0.is_empty() || self.x0.iter().any(|c| !c.is_finite()) {
            return Err(invalid("x0", "center must be a finite point"));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(invalid("radius", format!("must be positive, got {}", self.radius)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration", format!("must be positive, got {}", self.duration)));
        }
        if !(self.rho > 0.0 && self.rho < self.radius) {
            return Err(invalid("rho", format!("need 0 < rho < radius = {}, got {}", self.radius, self.rho)));
        }
        if !(self.delta > 0.0 && self.delta < self.duration) {
            return Err(invalid("delta", format!("need 0 < delta < duration = {}, got {}", self.duration, self.delta)));
        }
        if !self.t0.is_finite() {
            return Err(invalid("t0", "must be finite"));
        }
        Ok(())
    }

    /// `t₀ − T`.
    pub fn t_start(&self) -> f64 {
        self.t0 - self.duration
    }

    /// `t₀ − T + δ`.
    pub fn t_cut(&self) -> f64 {
        self.t_start() + self.delta
    }

    pub fn contains_time(&self, t: f64) -> bool {
        t >= self.t_start() && t <= self.t0
    }

    /// Membership in `Q_{R/2,T/2} = B(x₀, R/2) × [t₀ − T/2, t₀]`.
    pub fn in_half_cylinder(&self, d: f64, t: f64) -> bool {
        d < 0.5 * self.radius && t >= self.t0 - 0.5 * self.duration && t <= self.t0
    }

    pub fn cutoff_params(&self, a: f64) -> CutoffParams {
        CutoffParams { a, radius: self.radius, rho: self.rho, t0: self.t0, duration: self.duration, delta: self.delta }
    }

    /// `ρ = R/2`, `δ = T/2`, the choice behind the interior corollaries.
    pub fn with_half_margins(&self) -> Self {
        Self { rho: 0.5 * self.radius, delta: 0.5 * self.duration, ..self.clone() }
    }
}
