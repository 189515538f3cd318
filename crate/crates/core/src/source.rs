//! The nonlinearity `S(x, t, u)` and the two functionals the estimates need:
//!
//! * `γ = sup |∇ₓS| / u` over `Q_{R,T} × (0, M]`,
//! * `μ = sup (k + ∂ᵤS − S/u + S/(u(1 − v)))₊` with `v = ln(u/M)`.
//!
//! Power-law sources have closed forms; everything else falls back to grid
//! suprema with one dyadic refinement.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::MetricSpec;
use crate::solver::DomainSpec;

/// A source registered in code: value, flat space gradient and `∂ᵤS`.
pub trait CustomSource: Send + Sync {
    fn id(&self) -> &str;
    fn value(&self, x: &[f64], t: f64, u: f64) -> f64;
    fn grad_x(&self, x: &[f64], t: f64, u: f64) -> Vec<f64>;
    fn d_u(&self, x: &[f64], t: f64, u: f64) -> f64;
}

#[derive(Clone)]
pub enum SourceSpec {
    Zero,
    /// `λ u^α`
    Power {
        lambda: f64,
        alpha: f64,
    },
    /// `u^p`
    SemilinearP {
        p: f64,
    },
    Custom(Arc<dyn CustomSource>),
}

impl fmt::Debug for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => f.write_str("Zero"),
            Self::Power { lambda, alpha } => {
                f.debug_struct("Power").field("lambda", lambda).field("alpha", alpha).finish()
            }
            Self::SemilinearP { p } => f.debug_struct("SemilinearP").field("p", p).finish(),
            Self::Custom(c) => f.debug_tuple("Custom").field(&c.id()).finish(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceDescriptor {
    Zero,
    Power { lambda: f64, alpha: f64 },
    Semilinear { p: f64 },
    Custom { id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    GridSup,
}

/// A supremum together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupValue {
    pub value: f64,
    pub method: Method,
}

/// `γ` and `μ` for one source on one cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceAnalysis {
    pub gamma: f64,
    pub mu: f64,
    pub method: Method,
}

impl SourceAnalysis {
    pub fn new(gamma: f64, mu: f64, method: Method) -> Result<Self> {
        if !(gamma >= 0.0) {
            return Err(invalid("gamma", format!("must be non-negative, got {gamma}")));
        }
        if !(mu >= 0.0) {
            return Err(invalid("mu", format!("must be non-negative, got {mu}")));
        }
        Ok(Self { gamma, mu, method })
    }

    /// The heat equation on a manifold with `Ric ≥ −k`: `γ = 0`, `μ = k₊`.
    pub fn heat(k: f64) -> Self {
        Self { gamma: 0.0, mu: k.max(0.0), method: Method::ClosedForm }
    }

    /// True when `γ` is the unbounded sentinel and downstream bounds are vacuous.
    pub fn is_vacuous(&self) -> bool {
        !self.gamma.is_finite() || !self.mu.is_finite()
    }
}

/// Sampling resolution for grid suprema.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupGrid {
    /// Points per spatial axis across the ball's bounding box.
    pub space: usize,
    pub time: usize,
    pub u: usize,
    pub v: usize,
}

impl Default for SupGrid {
    fn default() -> Self {
        Self { space: 21, time: 9, u: 65, v: 17 }
    }
}

impl SupGrid {
    /// Doubles every resolution so that the coarse nodes are a subset.
    pub fn refined(&self) -> Self {
        let d = |n: usize| 2 * n - 1;
        Self { space: d(self.space), time: d(self.time), u: d(self.u), v: d(self.v) }
    }
}

/// `ϑ` of the semilinear corollary: `M` for `p > 1`, 1 for `p = 1`, `inf u`
/// for `p ∈ (0, 1)`, 0 for `p = 0`, `M` for `p < 0`.
pub fn semilinear_theta(p: f64, m_sup: f64, m_inf: f64) -> f64 {
    if p > 1.0 {
        m_sup
    } else if p == 1.0 {
        1.0
    } else if p > 0.0 {
        m_inf
    } else if p == 0.0 {
        0.0
    } else {
        m_sup
    }
}

/// `p ϑ^{p−1}`, taken as 0 when `p = 0`.
pub fn semilinear_mu_term(p: f64, theta: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * theta.powf(p - 1.0)
    }
}

impl SourceSpec {
    pub fn descriptor(&self) -> SourceDescriptor {
        match self {
            Self::Zero => SourceDescriptor::Zero,
            Self::Power { lambda, alpha } => SourceDescriptor::Power { lambda: *lambda, alpha: *alpha },
            Self::SemilinearP { p } => SourceDescriptor::Semilinear { p: *p },
            Self::Custom(c) => SourceDescriptor::Custom { id: c.id().to_string() },
        }
    }

    /// Inverse of [`SourceSpec::descriptor`]; custom ids resolve through [`builtin_custom`].
    pub fn from_descriptor(d: &SourceDescriptor) -> Result<Self> {
        Ok(match d {
            SourceDescriptor::Zero => Self::Zero,
            SourceDescriptor::Power { lambda, alpha } => {
                if !(lambda.is_finite() && alpha.is_finite()) {
                    return Err(invalid("lambda", "power source parameters must be finite"));
                }
                Self::Power { lambda: *lambda, alpha: *alpha }
            }
            SourceDescriptor::Semilinear { p } => {
                if !p.is_finite() {
                    return Err(invalid("p", "exponent must be finite"));
                }
                Self::SemilinearP { p: *p }
            }
            SourceDescriptor::Custom { id } => Self::Custom(
                builtin_custom(id).ok_or_else(|| invalid("id", format!("no built-in source named `{id}`")))?,
            ),
        })
    }

    pub fn depends_on_x(&self) -> bool {
        matches!(self, Self::Custom(_))
    }

    /// `S(x, t, u)`.
    pub fn eval(&self, x: &[f64], t: f64, u: f64) -> Result<f64> {
        if !(u > 0.0) {
            return Err(Error::NonPositiveU(u));
        }
        let s = match self {
            Self::Zero => 0.0,
            Self::Power { lambda, alpha } => {
                if *lambda == 0.0 {
                    0.0
                } else {
                    lambda * u.powf(*alpha)
                }
            }
            Self::SemilinearP { p } => u.powf(*p),
            Self::Custom(c) => c.value(x, t, u),
        };
        finite(x, s)
    }

    /// `∂ᵤS(x, t, u)`.
    pub fn d_u(&self, x: &[f64], t: f64, u: f64) -> Result<f64> {
        if !(u > 0.0) {
            return Err(Error::NonPositiveU(u));
        }
        let d = match self {
            Self::Zero => 0.0,
            Self::Power { lambda, alpha } => {
                if *lambda == 0.0 || *alpha == 0.0 {
                    0.0
                } else {
                    lambda * alpha * u.powf(alpha - 1.0)
                }
            }
            Self::SemilinearP { p } => {
                if *p == 0.0 {
                    0.0
                } else {
                    p * u.powf(p - 1.0)
                }
            }
            Self::Custom(c) => c.d_u(x, t, u),
        };
        finite(x, d)
    }

    /// Flat spatial gradient `∇ₓS`.
    pub fn grad_x(&self, x: &[f64], t: f64, u: f64) -> Result<Vec<f64>> {
        match self {
            Self::Custom(c) => {
                let g = c.grad_x(x, t, u);
                match g.iter().find(|v| !v.is_finite()) {
                    Some(&v) => Err(Error::NonFinite { point: x.to_vec(), value: v }),
                    None => Ok(g),
                }
            }
            _ => Ok(vec![0.0; x.len()]),
        }
    }

    /// The integrand of `μ` before taking the positive part.
    pub fn mu_integrand(&self, k: f64, x: &[f64], t: f64, u: f64, v: f64) -> Result<f64> {
        let s = self.eval(x, t, u)?;
        let du = self.d_u(x, t, u)?;
        Ok(k + du - s / u + s / (u * (1.0 - v)))
    }
}

/// `S(x, t, u)`.
pub fn eval_s(spec: &SourceSpec, x: &[f64], t: f64, u: f64) -> Result<f64> {
    spec.eval(x, t, u)
}

fn finite(x: &[f64], v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { point: x.to_vec(), value: v })
    }
}

/// Lattice points of the closed geodesic ball, always including the center.
/// Dimensions above three are sampled along the coordinate axes instead.
pub(crate) fn ball_samples(metric: &MetricSpec, domain: &DomainSpec, per_axis: usize) -> Result<Vec<Vec<f64>>> {
    let n = metric.dim();
    if domain.x0.len() != n {
        return Err(Error::Mismatch(format!(
            "domain center has {} coordinates, metric has dimension {n}",
            domain.x0.len()
        )));
    }
    let per_axis = per_axis.max(3) | 1;
    let half = (per_axis / 2) as i64;
    let (lo, hi) = bounding_box(metric, domain)?;
    let center_in = |x: &[f64]| -> Result<bool> {
        if !metric.contains(x) {
            return Ok(false);
        }
        Ok(metric.geodesic_distance(x, &domain.x0)? <= domain.radius)
    };
    let mut out = vec![domain.x0.clone()];
    let coord = |axis: usize, j: i64| {
        let c = domain.x0[axis];
        if j < 0 {
            c + (c - lo[axis]) * j as f64 / half as f64
        } else {
            c + (hi[axis] - c) * j as f64 / half as f64
        }
    };
    if n <= 3 {
        let total = (per_axis as i64).pow(n as u32);
        for idx in 0..total {
            let mut rem = idx;
            let mut x = Vec::with_capacity(n);
            let mut all_zero = true;
            for axis in 0..n {
                let j = rem % per_axis as i64 - half;
                rem /= per_axis as i64;
                all_zero &= j == 0;
                x.push(coord(axis, j));
            }
            if !all_zero && center_in(&x)? {
                out.push(x);
            }
        }
    } else {
        for axis in 0..n {
            for j in -half..=half {
                if j == 0 {
                    continue;
                }
                let mut x = domain.x0.clone();
                x[axis] = coord(axis, j);
                if center_in(&x)? {
                    out.push(x);
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn bounding_box(metric: &MetricSpec, domain: &DomainSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    if metric.is_euclidean() {
        let lo = domain.x0.iter().map(|c| c - domain.radius).collect();
        let hi = domain.x0.iter().map(|c| c + domain.radius).collect();
        return Ok((lo, hi));
    }
    let circle = metric.geodesic_circle(&domain.x0, domain.radius, 720)?;
    let mut lo = vec![f64::INFINITY; 2];
    let mut hi = vec![f64::NEG_INFINITY; 2];
    for p in &circle {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    Ok((lo, hi))
}

fn time_samples(domain: &DomainSpec, count: usize) -> Vec<f64> {
    let count = count.max(2);
    (0..count).map(|i| domain.t_start() + domain.duration * i as f64 / (count - 1) as f64).collect()
}

fn log_samples(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| {
            if i == 0 {
                lo
            } else if i + 1 == count {
                hi
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

fn gamma_grid_sup(spec: &SourceSpec, metric: &MetricSpec, xs: &[Vec<f64>], ts: &[f64], us: &[f64]) -> Result<f64> {
    xs.par_iter()
        .map(|x| {
            let mut best = 0.0f64;
            for &t in ts {
                for &u in us {
                    let g = spec.grad_x(x, t, u)?;
                    best = best.max(metric.covector_norm(x, &g) / u);
                }
            }
            Ok(best)
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

/// `γ`. Zero in closed form for sources that do not depend on `x`; otherwise
/// a grid sup with `u` log-spaced in `[M·10⁻⁶, M]`. If the ratio keeps growing
/// as `u → 0` the result is `+∞`.
pub fn compute_gamma(
    spec: &SourceSpec,
    domain: &DomainSpec,
    metric: &MetricSpec,
    m_sup: f64,
    grid: SupGrid,
) -> Result<SupValue> {
    if !(m_sup > 0.0) {
        return Err(invalid("M", format!("must be positive, got {m_sup}")));
    }
    if !spec.depends_on_x() {
        return Ok(SupValue { value: 0.0, method: Method::ClosedForm });
    }
    let mut value = 0.0;
    for g in [grid, grid.refined()] {
        let xs = ball_samples(metric, domain, g.space)?;
        let ts = time_samples(domain, g.time);
        let us = log_samples(m_sup * 1e-6, m_sup, g.u);
        value = gamma_grid_sup(spec, metric, &xs, &ts, &us)?;
    }
    // Probe below the sampled range for blow-up as u → 0.
    let xs = ball_samples(metric, domain, grid.space)?;
    let ts = time_samples(domain, grid.time);
    let at_floor = gamma_grid_sup(spec, metric, &xs, &ts, &[m_sup * 1e-6])?;
    let deeper = gamma_grid_sup(spec, metric, &xs, &ts, &[m_sup * 1e-12])?;
    if deeper > 2.0 * at_floor.max(value) && deeper > 0.0 {
        value = f64::INFINITY;
    }
    Ok(SupValue { value, method: Method::GridSup })
}

/// Closed-form `μ` where one is available:
///
/// * `Zero` (or `λ = 0`): `k₊`
/// * `λ ≥ 0, α ∈ [0, 1)`: `(k + λα m^{α−1})₊`
/// * `λ ≥ 0, α ≥ 1`: `(k + λα M^{α−1})₊`
/// * `λ < 0, α ≤ 1`: `(k + λ(α−1) m^{α−1})₊`
/// * `u^p`: `(k + p ϑ^{p−1})₊`
pub fn mu_closed_form(spec: &SourceSpec, k: f64, m_sup: f64, m_inf: f64) -> Result<f64> {
    check_bounds(m_sup, m_inf)?;
    let raw = match spec {
        SourceSpec::Zero => k,
        SourceSpec::Power { lambda, .. } if *lambda == 0.0 => k,
        SourceSpec::Power { lambda, alpha } => {
            let (l, a) = (*lambda, *alpha);
            if l >= 0.0 && (0.0..1.0).contains(&a) {
                k + l * a * m_inf.powf(a - 1.0)
            } else if l >= 0.0 && a >= 1.0 {
                k + l * a * m_sup.powf(a - 1.0)
            } else if l < 0.0 && a <= 1.0 {
                k + l * (a - 1.0) * m_inf.powf(a - 1.0)
            } else {
                return Err(Error::ClosedFormUnavailable(format!("power source with lambda = {l}, alpha = {a}")));
            }
        }
        SourceSpec::SemilinearP { p } => k + semilinear_mu_term(*p, semilinear_theta(*p, m_sup, m_inf)),
        SourceSpec::Custom(c) => return Err(Error::ClosedFormUnavailable(format!("custom source `{}`", c.id()))),
    };
    Ok(raw.max(0.0))
}

fn check_bounds(m_sup: f64, m_inf: f64) -> Result<()> {
    if !(m_inf > 0.0) {
        return Err(invalid("m", format!("lower bound must be positive, got {m_inf}")));
    }
    if !(m_sup >= m_inf) {
        return Err(invalid("M", format!("need M ≥ m = {m_inf}, got {m_sup}")));
    }
    Ok(())
}

fn mu_grid_once(spec: &SourceSpec, k: f64, xs: &[Vec<f64>], ts: &[f64], us: &[f64], vs: &[f64]) -> Result<f64> {
    xs.par_iter()
        .map(|x| {
            let mut best = 0.0f64;
            for &t in ts {
                for &u in us {
                    for &v in vs {
                        best = best.max(spec.mu_integrand(k, x, t, u, v)?);
                    }
                }
            }
            Ok(best)
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

/// Decoupled grid sup of `μ`: `u ∈ [m, M]` and `v ∈ [ln(m/M), 0]` are sampled
/// independently, which bounds the field-coupled value from above.
pub fn mu_grid_sup(
    spec: &SourceSpec,
    domain: &DomainSpec,
    metric: &MetricSpec,
    m_sup: f64,
    m_inf: f64,
    grid: SupGrid,
) -> Result<f64> {
    check_bounds(m_sup, m_inf)?;
    let k = metric.ricci_lower_bound();
    let v_lo = (m_inf / m_sup).ln();
    let vs: Vec<f64> = (0..grid.v.max(2))
        .map(|i| if i + 1 == grid.v.max(2) { 0.0 } else { v_lo * (1.0 - i as f64 / (grid.v.max(2) - 1) as f64) })
        .collect();
    let (xs, ts) = if spec.depends_on_x() {
        (ball_samples(metric, domain, grid.space)?, time_samples(domain, grid.time))
    } else {
        (vec![domain.x0.clone()], vec![domain.t0])
    };
    let us = log_samples(m_inf, m_sup, grid.u);
    mu_grid_once(spec, k, &xs, &ts, &us, &vs)
}

/// `μ` by closed form where available, otherwise the refined decoupled grid sup.
pub fn compute_mu(
    spec: &SourceSpec,
    domain: &DomainSpec,
    metric: &MetricSpec,
    m_sup: f64,
    m_inf: f64,
    grid: SupGrid,
) -> Result<SupValue> {
    match mu_closed_form(spec, metric.ricci_lower_bound(), m_sup, m_inf) {
        Ok(value) => Ok(SupValue { value, method: Method::ClosedForm }),
        Err(Error::ClosedFormUnavailable(_)) => {
            let value = mu_grid_sup(spec, domain, metric, m_sup, m_inf, grid.refined())?;
            Ok(SupValue { value, method: Method::GridSup })
        }
        Err(e) => Err(e),
    }
}

/// `μ` along an actual field: `v = ln(u/M)` taken from the samples themselves.
pub fn mu_coupled<'a, I>(spec: &SourceSpec, k: f64, m_sup: f64, samples: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [f64], f64, f64)>,
{
    let mut best = 0.0f64;
    for (x, t, u) in samples {
        let v = (u / m_sup).ln();
        best = best.max(spec.mu_integrand(k, x, t, u, v)?);
    }
    Ok(best)
}

/// `γ` and `μ` together.
pub fn analyze(
    spec: &SourceSpec,
    domain: &DomainSpec,
    metric: &MetricSpec,
    m_sup: f64,
    m_inf: f64,
    grid: SupGrid,
) -> Result<SourceAnalysis> {
    let g = compute_gamma(spec, domain, metric, m_sup, grid)?;
    let m = compute_mu(spec, domain, metric, m_sup, m_inf, grid)?;
    let method =
        if g.method == Method::GridSup || m.method == Method::GridSup { Method::GridSup } else { Method::ClosedForm };
    SourceAnalysis::new(g.value, m.value, method)
}

/// `S = u sin x₁`; `|∇ₓS|/u = |cos x₁|`.
#[derive(Debug, Clone, Copy, Default)]
pub struct USinX1;

impl CustomSource for USinX1 {
    fn id(&self) -> &str {
        "u_sin_x1"
    }
    fn value(&self, x: &[f64], _t: f64, u: f64) -> f64 {
        u * x[0].sin()
    }
    fn grad_x(&self, x: &[f64], _t: f64, u: f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        g[0] = u * x[0].cos();
        g
    }
    fn d_u(&self, x: &[f64], _t: f64, _u: f64) -> f64 {
        x[0].sin()
    }
}

/// `S = √u · x₁`; `|∇ₓS|/u = u^{−1/2}` is unbounded as `u → 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SqrtUX1;

impl CustomSource for SqrtUX1 {
    fn id(&self) -> &str {
        "sqrt_u_x1"
    }
    fn value(&self, x: &[f64], _t: f64, u: f64) -> f64 {
        u.sqrt() * x[0]
    }
    fn grad_x(&self, x: &[f64], _t: f64, u: f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        g[0] = u.sqrt();
        g
    }
    fn d_u(&self, x: &[f64], _t: f64, u: f64) -> f64 {
        0.5 * x[0] / u.sqrt()
    }
}

/// Built-in custom sources addressable by id.
pub fn builtin_custom(id: &str) -> Option<Arc<dyn CustomSource>> {
    match id {
        "u_sin_x1" => Some(Arc::new(USinX1)),
        "sqrt_u_x1" => Some(Arc::new(SqrtUX1)),
        _ => None,
    }
}
