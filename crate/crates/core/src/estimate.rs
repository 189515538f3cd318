//! The quantities entering the logarithmic gradient bound: auxiliary fields,
//! boundary traces, the four space-time regions with their coefficients, the
//! function `𝒵`, the full right-hand side, and the classical special cases.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::MetricSpec;
use crate::solver::{DomainSpec, NodeKind, SolutionField};
use crate::source::{semilinear_mu_term, semilinear_theta, SourceAnalysis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateConstants {
    pub gamma: f64,
    pub mu: f64,
    pub k_plus: f64,
    /// `γ^{1/3} + √μ`
    pub c_script: f64,
    /// `1/√δ`
    pub t_script: f64,
    /// `1/ρ + 1/√(ρ(R−ρ)) + k₊^{1/4}/√ρ`
    pub s_script: f64,
    /// `γ^{2/3} + μ`
    pub tilde_c: f64,
    /// `1/δ`
    pub tilde_t: f64,
    /// `1/ρ² + 1/(ρ(R−ρ)) + √k₊/ρ`
    pub tilde_s: f64,
}

impl EstimateConstants {
    pub fn new(analysis: &SourceAnalysis, domain: &DomainSpec, k: f64) -> Result<Self> {
        domain.validate()?;
        let (gamma, mu) = (analysis.gamma, analysis.mu);
        if !(gamma >= 0.0 && mu >= 0.0) {
            return Err(invalid("gamma", format!("need γ, μ ≥ 0, got {gamma}, {mu}")));
        }
        let kp = k.max(0.0);
        let (r, rho, delta) = (domain.radius, domain.rho, domain.delta);
        Ok(Self {
            gamma,
            mu,
            k_plus: kp,
            c_script: gamma.cbrt() + mu.sqrt(),
            t_script: 1.0 / delta.sqrt(),
            s_script: 1.0 / rho + 1.0 / (rho * (r - rho)).sqrt() + kp.powf(0.25) / rho.sqrt(),
            tilde_c: gamma.powf(2.0 / 3.0) + mu,
            tilde_t: 1.0 / delta,
            tilde_s: 1.0 / (rho * rho) + 1.0 / (rho * (r - rho)) + kp.sqrt() / rho,
        })
    }
}

/// `τ_u` (initial slice) and `σ_u` (lateral boundary); `None` means unknown
/// and acts as `+∞` inside every minimum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundaryTraces {
    pub tau_u: Option<f64>,
    pub sigma_u: Option<f64>,
}

impl BoundaryTraces {
    pub fn known(tau: f64, sigma: f64) -> Self {
        Self { tau_u: Some(tau), sigma_u: Some(sigma) }
    }

    pub fn unknown() -> Self {
        Self { tau_u: None, sigma_u: None }
    }

    pub fn tau(&self) -> f64 {
        self.tau_u.unwrap_or(f64::INFINITY)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_u.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    /// Near the initial slice, away from the lateral boundary.
    B1,
    /// Near the lateral boundary, after the initial layer.
    B2,
    /// The corner where both layers meet.
    B3,
    /// Away from both.
    Interior,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::B1, Region::B2, Region::B3, Region::Interior];
}

/// Region of a point at geodesic distance `d` from the center. The time seam
/// belongs to the later sets and the spatial seam to the annulus.
pub fn region_from_distance(d: f64, t: f64, domain: &DomainSpec) -> Result<Region> {
    let outside = || Error::OutsideCylinder { x: vec![d], t };
    if !(d >= 0.0 && d <= domain.radius) || !domain.contains_time(t) {
        return Err(outside());
    }
    let near_lateral = d >= domain.radius - domain.rho;
    let early = t < domain.t_cut();
    Ok(match (near_lateral, early) {
        (false, true) => Region::B1,
        (true, false) => Region::B2,
        (true, true) => Region::B3,
        (false, false) => Region::Interior,
    })
}

pub fn region_of(x: &[f64], t: f64, domain: &DomainSpec, metric: &MetricSpec) -> Result<Region> {
    let d = metric.geodesic_distance(x, &domain.x0)?;
    region_from_distance(d, t, domain).map_err(|_| Error::OutsideCylinder { x: x.to_vec(), t })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionCoefficients {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub iota: f64,
    pub c: f64,
}

impl RegionCoefficients {
    pub fn new(traces: &BoundaryTraces, k: &EstimateConstants, c: f64) -> Result<Self> {
        check_c(c)?;
        let (s, t) = (traces.sigma(), traces.tau());
        let (ct, cs) = (c * k.t_script, c * k.s_script);
        Ok(Self {
            beta1: t + s.min(cs),
            beta2: s + t.min(ct),
            beta3: s + t,
            iota: (s + t).min(s + ct).min(t + cs).min(c * (k.t_script + k.s_script)),
            c,
        })
    }

    pub fn of(&self, r: Region) -> f64 {
        match r {
            Region::B1 => self.beta1,
            Region::B2 => self.beta2,
            Region::B3 => self.beta3,
            Region::Interior => self.iota,
        }
    }
}

fn check_c(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(invalid("C", format!("must be positive and finite, got {c}")))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn eval_z(
    x: &[f64],
    t: f64,
    domain: &DomainSpec,
    metric: &MetricSpec,
    traces: &BoundaryTraces,
    k: &EstimateConstants,
    c: f64,
) -> Result<f64> {
    let r = region_of(x, t, domain, metric)?;
    Ok(RegionCoefficients::new(traces, k, c)?.of(r))
}

/// `1 + ln(M/u)`, i.e. `1 − v`.
pub fn log_factor(u: f64, m: f64) -> Result<f64> {
    if !(u > 0.0 && u <= m) {
        return Err(Error::AboveBound { value: u, bound: m });
    }
    Ok(1.0 + (m / u).ln())
}

/// `(C 𝒞 + 𝒵)(1 + ln(M/u))`.
pub fn theorem_rhs(z: f64, u: f64, m: f64, k: &EstimateConstants, c: f64) -> Result<f64> {
    check_c(c)?;
    Ok((c * k.c_script + z) * log_factor(u, m)?)
}

/// Upper bounds for `w` in each region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionalWBounds {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub interior: f64,
}

impl RegionalWBounds {
    pub fn of(&self, r: Region) -> f64 {
        match r {
            Region::B1 => self.b1,
            Region::B2 => self.b2,
            Region::B3 => self.b3,
            Region::Interior => self.interior,
        }
    }
}

pub fn regional_w_bounds(traces: &BoundaryTraces, k: &EstimateConstants, c: f64) -> Result<RegionalWBounds> {
    check_c(c)?;
    let (s2, t2) = (traces.sigma().powi(2), traces.tau().powi(2));
    let base = c * k.tilde_c;
    Ok(RegionalWBounds {
        b1: base + t2 + c * k.tilde_s,
        b2: base + s2 + c * k.tilde_t,
        b3: base + s2 + t2,
        interior: base + (s2 + t2).min(s2 + c * k.tilde_t).min(t2 + c * k.tilde_s).min(c * (k.tilde_t + k.tilde_s)),
    })
}

/// Special cases, all stated on the half cylinder `Q_{R/2,T/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorollaryKind {
    /// `C(1/R + 1/√T + √k)`.
    SzHeat,
    /// Squared coefficient `C(k + 1/R² + 1/T + source term)` for `S = λu^α`.
    MaZeng { lambda: f64, alpha: f64 },
    /// `C(max(√k₊, √(k + pϑ^{p−1})₊) + 1/√T + 1/R)` for `S = u^p`.
    SemilinearP { p: f64 },
    /// `C(1/R + 1/√T + √(2M + k)₊)` for `S = u²`.
    USquared,
    /// `C(𝒞 + 1/√T + 1/R + k₊^{1/4}/√R)`.
    InteriorGeneral,
    /// `C(√k₊ + ε)` with `ε = max(σ_u, τ_u)`, the form for small boundary data.
    BoundaryAware,
}

impl CorollaryKind {
    /// Whether the bound controls `|∇u|²/u²` against `(1 + ln(M/u))²`.
    pub fn is_squared(&self) -> bool {
        matches!(self, Self::MaZeng { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::SzHeat => "sz_heat",
            Self::MaZeng { .. } => "ma_zeng",
            Self::SemilinearP { .. } => "semilinear_p",
            Self::USquared => "u_squared",
            Self::InteriorGeneral => "interior_general",
            Self::BoundaryAware => "boundary_aware",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorollaryParams {
    pub k: f64,
    pub radius: f64,
    pub duration: f64,
    pub m_sup: f64,
    pub m_inf: f64,
    /// `𝒞`, used by the general interior form.
    pub c_script: f64,
    pub traces: BoundaryTraces,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaZengRegime {
    /// `λ ≥ 0`, `α ∈ [0, 1)`
    Sublinear,
    /// `λ ≥ 0`, `α ≥ 1`
    Superlinear,
    /// `λ < 0`, `α ≤ 1`
    Absorbing,
}

pub fn ma_zeng_regime(lambda: f64, alpha: f64) -> Result<MaZengRegime> {
    if lambda >= 0.0 && (0.0..1.0).contains(&alpha) {
        Ok(MaZengRegime::Sublinear)
    } else if lambda >= 0.0 && alpha >= 1.0 {
        Ok(MaZengRegime::Superlinear)
    } else if lambda < 0.0 && alpha <= 1.0 {
        Ok(MaZengRegime::Absorbing)
    } else {
        Err(Error::Regime(format!("no bound for lambda = {lambda}, alpha = {alpha}")))
    }
}

/// Coefficient of `(1 + ln(M/u))` (or of its square for the squared forms).
pub fn corollary_bound(kind: CorollaryKind, p: &CorollaryParams, c: f64) -> Result<f64> {
    check_c(c)?;
    if !(p.radius > 0.0 && p.duration > 0.0) {
        return Err(invalid("radius", "radius and duration must be positive"));
    }
    if !(p.m_inf > 0.0 && p.m_sup >= p.m_inf) {
        return Err(invalid("m", format!("need 0 < m ≤ M, got m = {}, M = {}", p.m_inf, p.m_sup)));
    }
    let (r, t, k) = (p.radius, p.duration, p.k);
    let kp = k.max(0.0);
    Ok(match kind {
        CorollaryKind::SzHeat => {
            if k < 0.0 {
                return Err(Error::Regime(format!("needs k ≥ 0, got {k}")));
            }
            c * (1.0 / r + 1.0 / t.sqrt() + k.sqrt())
        }
        CorollaryKind::MaZeng { lambda, alpha } => {
            let term = match ma_zeng_regime(lambda, alpha)? {
                MaZengRegime::Sublinear => lambda * alpha * p.m_inf.powf(alpha - 1.0),
                MaZengRegime::Superlinear => lambda * alpha * p.m_sup.powf(alpha - 1.0),
                MaZengRegime::Absorbing => lambda * (alpha - 1.0) * p.m_inf.powf(alpha - 1.0),
            };
            if k < 0.0 {
                return Err(Error::Regime(format!("needs k ≥ 0, got {k}")));
            }
            // λα m^{α−1} with λ = 0 is zero even when α < 1
            let term = if lambda == 0.0 { 0.0 } else { term };
            c * (k + 1.0 / (r * r) + 1.0 / t + term)
        }
        CorollaryKind::SemilinearP { p: pw } => {
            let theta = semilinear_theta(pw, p.m_sup, p.m_inf);
            let grow = (k + semilinear_mu_term(pw, theta)).max(0.0).sqrt();
            c * (kp.sqrt().max(grow) + 1.0 / t.sqrt() + 1.0 / r)
        }
        CorollaryKind::USquared => c * (1.0 / r + 1.0 / t.sqrt() + (2.0 * p.m_sup + k).max(0.0).sqrt()),
        CorollaryKind::InteriorGeneral => c * (p.c_script + 1.0 / t.sqrt() + 1.0 / r + kp.powf(0.25) / r.sqrt()),
        CorollaryKind::BoundaryAware => {
            let eps = p.traces.sigma().max(p.traces.tau());
            c * (kp.sqrt() + eps)
        }
    })
}

/// `v`, `|∇v|` and `w` at one node and level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedSample {
    pub node: usize,
    pub level: usize,
    pub v: f64,
    pub grad_v: f64,
    pub w: f64,
}

/// `v = ln(u/M)`, `|∇v|_g` and `w = |∇v|²/(1 − v)²` on interior nodes.
pub fn derived_fields(field: &SolutionField) -> Result<Vec<DerivedSample>> {
    let m = field.m_bound();
    let lat = field.lattice();
    let nodes: Vec<usize> = lat.interior_nodes().collect();
    let mut out = Vec::with_capacity(nodes.len() * field.times().len());
    for k in 0..field.times().len() {
        let level: Vec<DerivedSample> = nodes
            .par_iter()
            .map(|&i| {
                let u = field.value(i, k);
                if u > m {
                    return Err(Error::AboveBound { value: u, bound: m });
                }
                let v = (u / m).ln();
                let gv = field
                    .log_gradient(i, k)
                    .ok_or_else(|| Error::GridTooCoarse(format!("no gradient stencil at {:?}", lat.coords(i))))?;
                Ok(DerivedSample { node: i, level: k, v, grad_v: gv, w: (gv / (1.0 - v)).powi(2) })
            })
            .collect::<Result<_>>()?;
        out.extend(level);
    }
    Ok(out)
}

/// Densely sampled traces: closed-form fields use points on the sphere
/// `∂B(x₀, R)` and the initial slice; grid fields use the cut-cell layer over
/// all levels and every node of the first level.
pub fn boundary_traces(field: &SolutionField) -> Result<BoundaryTraces> {
    let lat = field.lattice();
    let m = field.m_bound();
    if lat.boundary_nodes().next().is_none() {
        return Err(Error::GridTooCoarse("field has no boundary layer".into()));
    }
    let ratio = |g: f64, u: f64| g / (1.0 - (u / m).ln());
    let level0 = |nodes: &mut dyn Iterator<Item = usize>| {
        nodes.filter_map(|i| field.log_gradient(i, 0).map(|g| ratio(g, field.value(i, 0)))).fold(0.0f64, f64::max)
    };
    if let Some((kind, scale)) = field.exact() {
        let domain = field.domain();
        let metric = field.metric();
        let sphere = sphere_points(metric, domain)?;
        let at = |x: &[f64], t: f64| -> f64 {
            let u = scale * kind.value(x, t);
            let g: Vec<f64> = kind.gradient(x, t).iter().map(|d| d * scale).collect();
            ratio(metric.covector_norm(x, &g) / u, u.min(m))
        };
        let ts = domain.t_start();
        let tau = sphere.iter().map(|x| at(x, ts)).fold(level0(&mut lat.interior_nodes()), f64::max);
        let times: Vec<f64> = (0..=256).map(|j| ts + domain.duration * j as f64 / 256.0).collect();
        let sigma = times
            .par_iter()
            .map(|&t| sphere.iter().map(|x| at(x, t)).fold(0.0f64, f64::max))
            .collect::<Vec<_>>()
            .into_iter()
            .fold(0.0f64, f64::max);
        return Ok(BoundaryTraces::known(tau, sigma));
    }
    let bnodes: Vec<usize> = lat.boundary_nodes().collect();
    let mut sigma = 0.0f64;
    for k in 0..field.times().len() {
        for &i in &bnodes {
            if lat.kind(i) != NodeKind::Boundary {
                continue;
            }
            if let Some(g) = field.log_gradient(i, k) {
                sigma = sigma.max(ratio(g, field.value(i, k)));
            }
        }
    }
    Ok(BoundaryTraces::known(level0(&mut (0..lat.len())), sigma))
}

// Points on the geodesic sphere of radius R: a dense circle in two
// dimensions, axis and diagonal directions otherwise.
fn sphere_points(metric: &MetricSpec, domain: &DomainSpec) -> Result<Vec<Vec<f64>>> {
    let n = metric.dim();
    if n == 2 {
        return Ok(metric.geodesic_circle(&domain.x0, domain.radius, 1024)?.into_iter().map(|p| p.to_vec()).collect());
    }
    if !metric.is_euclidean() {
        return Err(Error::Mismatch("sphere sampling needs a flat metric above two dimensions".into()));
    }
    let mut pts = Vec::new();
    for a in 0..n {
        for s in [-1.0, 1.0] {
            let mut x = domain.x0.clone();
            x[a] += s * domain.radius;
            pts.push(x);
        }
    }
    if n <= 10 {
        let r = domain.radius / (n as f64).sqrt();
        for mask in 0..(1usize << n) {
            let x: Vec<f64> = (0..n).map(|a| domain.x0[a] + if mask >> a & 1 == 1 { r } else { -r }).collect();
            pts.push(x);
        }
    }
    Ok(pts)
}
