//! Cut-off functions and their derivative-bound constants.
//!
//! The transition profile `α` is `t^{2/(1−a)}` on `[0, 1/4]`, `1 − (1−t)⁴` on
//! `[3/4, 1]`, 0 left of the origin and 1 right of 1. On `(1/4, 3/4)` it is
//! the quintic Hermite polynomial that matches value, slope and curvature at
//! both junctions, which makes `α` globally C².

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const BRIDGE_LO: f64 = 0.25;
const BRIDGE_HI: f64 = 0.75;
const MONOTONE_SAMPLES: usize = 1000;
/// Values of ψ̄ or φ below this are treated as zero in ratio sups.
pub const RATIO_FLOOR: f64 = 1e-300;

/// The C² increasing profile `α: ℝ → [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    a: f64,
    exponent: f64,
    // quintic in s = 2t − 1/2 on the bridge
    bridge: [f64; 6],
}

impl Transition {
    pub fn new(a: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0) {
            return Err(invalid("a", format!("must lie in (0, 1), got {a}")));
        }
        let exponent = 2.0 / (1.0 - a);
        let lo = [
            BRIDGE_LO.powf(exponent),
            exponent * BRIDGE_LO.powf(exponent - 1.0),
            exponent * (exponent - 1.0) * BRIDGE_LO.powf(exponent - 2.0),
        ];
        let q = 1.0 - BRIDGE_HI;
        let hi = [1.0 - q.powi(4), 4.0 * q.powi(3), -12.0 * q * q];
        // dt/ds = 1/2
        let (p0, v0, a0) = (lo[0], lo[1] / 2.0, lo[2] / 4.0);
        let (p1, v1, a1) = (hi[0], hi[1] / 2.0, hi[2] / 4.0);
        let dp = p1 - p0;
        let bridge = [
            p0,
            v0,
            a0 / 2.0,
            10.0 * dp - 6.0 * v0 - 4.0 * v1 - (3.0 * a0 - a1) / 2.0,
            -15.0 * dp + 8.0 * v0 + 7.0 * v1 + (3.0 * a0 - 2.0 * a1) / 2.0,
            6.0 * dp - 3.0 * (v0 + v1) - (a0 - a1) / 2.0,
        ];
        let profile = Self { a, exponent, bridge };
        let monotone = (0..=MONOTONE_SAMPLES).all(|i| {
            let t = BRIDGE_LO + (BRIDGE_HI - BRIDGE_LO) * i as f64 / MONOTONE_SAMPLES as f64;
            profile.d1(t) > 0.0
        });
        if !monotone {
            return Err(Error::NonMonotoneBridge { a });
        }
        Ok(profile)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    fn bridge_eval(&self, t: f64) -> [f64; 3] {
        let s = 2.0 * t - 0.5;
        let c = &self.bridge;
        let p = ((((c[5] * s + c[4]) * s + c[3]) * s + c[2]) * s + c[1]) * s + c[0];
        let dp = (((5.0 * c[5] * s + 4.0 * c[4]) * s + 3.0 * c[3]) * s + 2.0 * c[2]) * s + c[1];
        let ddp = ((20.0 * c[5] * s + 12.0 * c[4]) * s + 6.0 * c[3]) * s + 2.0 * c[2];
        [p, 2.0 * dp, 4.0 * ddp]
    }

    /// Value, first and second derivative at `t`.
    pub fn eval(&self, t: f64) -> [f64; 3] {
        let e = self.exponent;
        if t <= 0.0 {
            [0.0, 0.0, 0.0]
        } else if t <= BRIDGE_LO {
            [t.powf(e), e * t.powf(e - 1.0), e * (e - 1.0) * t.powf(e - 2.0)]
        } else if t < BRIDGE_HI {
            self.bridge_eval(t)
        } else if t < 1.0 {
            let q = 1.0 - t;
            [1.0 - q.powi(4), 4.0 * q.powi(3), -12.0 * q * q]
        } else {
            [1.0, 0.0, 0.0]
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.eval(t)[0]
    }

    pub fn d1(&self, t: f64) -> f64 {
        self.eval(t)[1]
    }

    pub fn d2(&self, t: f64) -> f64 {
        self.eval(t)[2]
    }
}

/// `α(t)` for a given `a ∈ (0, 1)`.
pub fn alpha(t: f64, a: f64) -> Result<f64> {
    Ok(Transition::new(a)?.value(t))
}

/// Parameters shared by the spatial and temporal cut-offs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffParams {
    pub a: f64,
    pub radius: f64,
    pub rho: f64,
    pub t0: f64,
    pub duration: f64,
    pub delta: f64,
}

impl CutoffParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(invalid("a", format!("must lie in (0, 1), got {}", self.a)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(invalid("radius", format!("must be positive, got {}", self.radius)));
        }
        if !(self.rho > 0.0 && self.rho < self.radius) {
            return Err(invalid("rho", format!("need 0 < rho < R = {}, got {}", self.radius, self.rho)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration", format!("must be positive, got {}", self.duration)));
        }
        if !(self.delta > 0.0 && self.delta < self.duration) {
            return Err(invalid("delta", format!("need 0 < delta < T = {}, got {}", self.duration, self.delta)));
        }
        if !self.t0.is_finite() {
            return Err(invalid("t0", "must be finite"));
        }
        Ok(())
    }
}

/// The spatial cut-off `ψ̄(r) = α((R − r)/ρ)` and temporal cut-off
/// `φ(t) = α((t − t₀ + T)/δ)` built from one transition profile.
#[derive(Debug, Clone)]
pub struct Cutoffs {
    params: CutoffParams,
    profile: Transition,
    t_start: f64,
}

impl Cutoffs {
    pub fn new(params: CutoffParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { profile: Transition::new(params.a)?, t_start: params.t0 - params.duration, params })
    }

    pub fn params(&self) -> &CutoffParams {
        &self.params
    }

    pub fn profile(&self) -> &Transition {
        &self.profile
    }

    fn space_arg(&self, r: f64) -> f64 {
        (self.params.radius - r) / self.params.rho
    }

    // Measured from the stored start time so that t ≤ t₀ − T maps to s ≤ 0 exactly.
    fn time_arg(&self, t: f64) -> f64 {
        (t - self.t_start) / self.params.delta
    }

    pub fn psi_bar(&self, r: f64) -> f64 {
        self.profile.value(self.space_arg(r))
    }

    pub fn psi_bar_d1(&self, r: f64) -> f64 {
        -self.profile.d1(self.space_arg(r)) / self.params.rho
    }

    pub fn psi_bar_d2(&self, r: f64) -> f64 {
        self.profile.d2(self.space_arg(r)) / (self.params.rho * self.params.rho)
    }

    pub fn phi_time(&self, t: f64) -> f64 {
        self.profile.value(self.time_arg(t))
    }

    pub fn phi_time_d1(&self, t: f64) -> f64 {
        self.profile.d1(self.time_arg(t)) / self.params.delta
    }

    /// `(ρ|ψ̄′| + ρ²|ψ̄″|) / ψ̄^a`, or `None` where ψ̄ vanishes.
    pub fn space_ratio(&self, r: f64) -> Option<f64> {
        let psi = self.psi_bar(r);
        if psi < RATIO_FLOOR {
            return None;
        }
        let rho = self.params.rho;
        let lhs = rho * self.psi_bar_d1(r).abs() + rho * rho * self.psi_bar_d2(r).abs();
        Some(lhs / psi.powf(self.params.a))
    }

    /// `δ|φ′| / φ^{(1+a)/2}`, or `None` where φ vanishes.
    pub fn time_ratio(&self, t: f64) -> Option<f64> {
        let phi = self.phi_time(t);
        if phi < RATIO_FLOOR {
            return None;
        }
        let lhs = self.params.delta * self.phi_time_d1(t).abs();
        Some(lhs / phi.powf((1.0 + self.params.a) / 2.0))
    }
}

/// `ψ̄(r)` for the given parameters.
pub fn psi_bar(r: f64, p: &CutoffParams) -> Result<f64> {
    Ok(Cutoffs::new(*p)?.psi_bar(r))
}

/// `φ(t)` for the given parameters.
pub fn phi_time(t: f64, p: &CutoffParams) -> Result<f64> {
    Ok(Cutoffs::new(*p)?.phi_time(t))
}

/// Ratio sups on one sampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioLevel {
    pub points: usize,
    pub c_space: f64,
    pub c_time: f64,
}

/// Measured cut-off constants with the per-piece breakdown of the spatial sup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffConstants {
    /// Sup on the finest grid.
    pub c_space: f64,
    pub c_time: f64,
    /// Coarse to fine; the last entry is the reported value.
    pub levels: Vec<RatioLevel>,
    /// Spatial sup restricted to `(R − r)/ρ ∈ (0, 1/4]`.
    pub space_power_max: f64,
    /// Spatial sup restricted to the Hermite bridge `(1/4, 3/4)`.
    pub space_bridge_max: f64,
    pub time_power_max: f64,
    pub time_bridge_max: f64,
}

impl CutoffConstants {
    /// Largest relative change of either constant between consecutive levels.
    pub fn max_relative_change(&self) -> f64 {
        self.levels
            .windows(2)
            .map(|w| {
                let ds = rel_change(w[0].c_space, w[1].c_space);
                let dt = rel_change(w[0].c_time, w[1].c_time);
                ds.max(dt)
            })
            .fold(0.0, f64::max)
    }
}

fn rel_change(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn uniform(lo: f64, hi: f64, points: usize) -> impl Iterator<Item = f64> {
    let n = (points - 1) as f64;
    (0..points).map(move |i| if i + 1 == points { hi } else { lo + (hi - lo) * i as f64 / n })
}

/// Sup of the cut-off ratios over `[0, R]` and `[t₀ − T, t₀]`, on
/// `grid_points` samples and two dyadic refinements.
pub fn measure_cutoff_constants(p: &CutoffParams, grid_points: usize) -> Result<CutoffConstants> {
    measure_cutoff_constants_on(p, (0.0, p.radius), (p.t0 - p.duration, p.t0), grid_points)
}

/// As [`measure_cutoff_constants`] but over explicit sampling ranges.
pub fn measure_cutoff_constants_on(
    p: &CutoffParams,
    r_range: (f64, f64),
    t_range: (f64, f64),
    grid_points: usize,
) -> Result<CutoffConstants> {
    if grid_points < 100 {
        return Err(invalid("grid_points", format!("need at least 100, got {grid_points}")));
    }
    let cut = Cutoffs::new(*p)?;
    let mut levels = Vec::with_capacity(3);
    let mut pieces = [0.0f64; 4];
    for level in 0..3 {
        let points = (grid_points - 1) * (1 << level) + 1;
        let mut c_space = 0.0f64;
        for r in uniform(r_range.0, r_range.1, points) {
            if let Some(ratio) = cut.space_ratio(r) {
                check_finite(r, ratio)?;
                c_space = c_space.max(ratio);
                if level == 2 {
                    let s = cut.space_arg(r);
                    if s <= BRIDGE_LO {
                        pieces[0] = pieces[0].max(ratio);
                    } else if s < BRIDGE_HI {
                        pieces[1] = pieces[1].max(ratio);
                    }
                }
            }
        }
        let mut c_time = 0.0f64;
        for t in uniform(t_range.0, t_range.1, points) {
            if let Some(ratio) = cut.time_ratio(t) {
                check_finite(t, ratio)?;
                c_time = c_time.max(ratio);
                if level == 2 {
                    let s = cut.time_arg(t);
                    if s <= BRIDGE_LO {
                        pieces[2] = pieces[2].max(ratio);
                    } else if s < BRIDGE_HI {
                        pieces[3] = pieces[3].max(ratio);
                    }
                }
            }
        }
        levels.push(RatioLevel { points, c_space, c_time });
    }
    let finest = levels[2];
    Ok(CutoffConstants {
        c_space: finest.c_space,
        c_time: finest.c_time,
        levels,
        space_power_max: pieces[0],
        space_bridge_max: pieces[1],
        time_power_max: pieces[2],
        time_bridge_max: pieces[3],
    })
}

fn check_finite(at: f64, ratio: f64) -> Result<()> {
    if ratio.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { point: vec![at], value: ratio })
    }
}

/// One row of the `cutoff-check` CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileRow {
    pub r: f64,
    pub psi: f64,
    pub d1: f64,
    pub d2: f64,
    /// Zero where ψ̄ vanishes (both sides of the bound are zero there).
    pub ratio: f64,
}

/// Uniform samples of ψ̄ on `[0, R]`.
pub fn cutoff_profile(p: &CutoffParams, points: usize) -> Result<Vec<ProfileRow>> {
    if points < 2 {
        return Err(invalid("points", "need at least two samples"));
    }
    let cut = Cutoffs::new(*p)?;
    Ok(uniform(0.0, p.radius, points)
        .map(|r| ProfileRow {
            r,
            psi: cut.psi_bar(r),
            d1: cut.psi_bar_d1(r),
            d2: cut.psi_bar_d2(r),
            ratio: cut.space_ratio(r).unwrap_or(0.0),
        })
        .collect())
}
