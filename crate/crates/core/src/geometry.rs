//! Ambient geometry: flat space or a conformally flat plane `g = φ δ`.
//!
//! Everything here works in Euclidean coordinates. In two dimensions the
//! Laplace–Beltrami operator of `g = φ δ` is `φ⁻¹` times the flat Laplacian,
//! and the metric gradient norm is the flat norm divided by `√φ`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A scalar field sampled on the metric domain.
///
/// Implementors that know their derivatives in closed form should override
/// [`ScalarField::gradient`] and [`ScalarField::laplacian`]; the geometry
/// operators then skip finite differences entirely.
pub trait ScalarField {
    fn value(&self, x: &[f64]) -> f64;

    /// Flat (coordinate) partial derivatives, if known exactly.
    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Flat Laplacian `Σ ∂ᵢᵢ f`, if known exactly.
    fn laplacian(&self, _x: &[f64]) -> Option<f64> {
        None
    }
}

impl<F> ScalarField for F
where
    F: Fn(&[f64]) -> f64,
{
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Centered finite-difference stencil of spacing `h`.
///
/// Interior stencils are fourth order:
/// `f' ≈ (−f₂ + 8f₁ − 8f₋₁ + f₋₂)/12h`,
/// `f'' ≈ (−f₂ + 16f₁ − 30f₀ + 16f₋₁ − f₋₂)/12h²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stencil {
    pub h: f64,
}

impl Default for Stencil {
    fn default() -> Self {
        Self { h: 1e-3 }
    }
}

impl Stencil {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid("h", format!("stencil spacing must be positive, got {h}")));
        }
        Ok(Self { h })
    }
}

/// A user-registered conformal factor `φ` with its open domain.
pub trait ConformalFactorFn: Send + Sync {
    fn id(&self) -> &str;
    fn factor(&self, x: &[f64]) -> f64;
    fn contains(&self, x: &[f64]) -> bool;
}

#[derive(Clone)]
pub enum ConformalFactor {
    /// `φ(x) = 4λ² / (1 − |x|²)²` on the unit disk.
    Poincare {
        lambda: f64,
    },
    Custom(Arc<dyn ConformalFactorFn>),
}

impl fmt::Debug for ConformalFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Poincare { lambda } => f.debug_struct("Poincare").field("lambda", lambda).finish(),
            Self::Custom(c) => f.debug_tuple("Custom").field(&c.id()).finish(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum MetricKind {
    Euclidean { dim: usize },
    Conformal2D(ConformalFactor),
}

/// Serializable summary of a metric, used in reports and field files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricDescriptor {
    Euclidean { dim: usize },
    Poincare { lambda: f64 },
    Custom { id: String, ricci_lower_bound: f64 },
}

#[derive(Debug, Clone)]
pub struct MetricSpec {
    kind: MetricKind,
    ricci_lower_bound: f64,
}

impl MetricSpec {
    pub fn euclidean(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(invalid("dim", format!("Euclidean dimension must be at least 2, got {dim}")));
        }
        Ok(Self { kind: MetricKind::Euclidean { dim }, ricci_lower_bound: 0.0 })
    }

    /// Poincaré disk `g = 4λ²δ/(1−|x|²)²`; its curvature is `−1/λ²`, so `k = 1/λ²`.
    pub fn poincare(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid("lambda", format!("Poincaré scale must be positive, got {lambda}")));
        }
        Ok(Self {
            kind: MetricKind::Conformal2D(ConformalFactor::Poincare { lambda }),
            ricci_lower_bound: 1.0 / (lambda * lambda),
        })
    }

    pub fn conformal(factor: Arc<dyn ConformalFactorFn>, ricci_lower_bound: f64) -> Result<Self> {
        if !ricci_lower_bound.is_finite() {
            return Err(invalid("k", "Ricci lower bound must be finite"));
        }
        Ok(Self { kind: MetricKind::Conformal2D(ConformalFactor::Custom(factor)), ricci_lower_bound })
    }

    pub fn from_descriptor(d: &MetricDescriptor) -> Result<Self> {
        match d {
            MetricDescriptor::Euclidean { dim } => Self::euclidean(*dim),
            MetricDescriptor::Poincare { lambda } => Self::poincare(*lambda),
            MetricDescriptor::Custom { id, .. } => Err(Error::UnsupportedDistance(id.clone())),
        }
    }

    pub fn descriptor(&self) -> MetricDescriptor {
        match &self.kind {
            MetricKind::Euclidean { dim } => MetricDescriptor::Euclidean { dim: *dim },
            MetricKind::Conformal2D(ConformalFactor::Poincare { lambda }) => {
                MetricDescriptor::Poincare { lambda: *lambda }
            }
            MetricKind::Conformal2D(ConformalFactor::Custom(c)) => {
                MetricDescriptor::Custom { id: c.id().to_string(), ricci_lower_bound: self.ricci_lower_bound }
            }
        }
    }

    pub fn kind(&self) -> &MetricKind {
        &self.kind
    }

    /// `k` with `Ric ≥ −k`.
    pub fn ricci_lower_bound(&self) -> f64 {
        self.ricci_lower_bound
    }

    pub fn k_plus(&self) -> f64 {
        self.ricci_lower_bound.max(0.0)
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            MetricKind::Euclidean { dim } => *dim,
            MetricKind::Conformal2D(_) => 2,
        }
    }

    pub fn is_euclidean(&self) -> bool {
        matches!(self.kind, MetricKind::Euclidean { .. })
    }

    pub fn poincare_lambda(&self) -> Option<f64> {
        match &self.kind {
            MetricKind::Conformal2D(ConformalFactor::Poincare { lambda }) => Some(*lambda),
            _ => None,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() || x.iter().any(|c| !c.is_finite()) {
            return false;
        }
        match &self.kind {
            MetricKind::Euclidean { .. } => true,
            MetricKind::Conformal2D(ConformalFactor::Poincare { .. }) => norm_sq(x) < 1.0,
            MetricKind::Conformal2D(ConformalFactor::Custom(c)) => c.contains(x),
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutsideDomain { point: x.to_vec() })
        }
    }

    /// Conformal factor `φ(x)`; identically 1 for flat space.
    pub fn conformal_factor(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.factor_unchecked(x))
    }

    pub(crate) fn factor_unchecked(&self, x: &[f64]) -> f64 {
        match &self.kind {
            MetricKind::Euclidean { .. } => 1.0,
            MetricKind::Conformal2D(ConformalFactor::Poincare { lambda }) => {
                let s = 1.0 - norm_sq(x);
                4.0 * lambda * lambda / (s * s)
            }
            MetricKind::Conformal2D(ConformalFactor::Custom(c)) => c.factor(x),
        }
    }

    pub fn geodesic_distance(&self, x: &[f64], x0: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(x0)?;
        match &self.kind {
            MetricKind::Euclidean { .. } => Ok(euclid_dist(x, x0)),
            MetricKind::Conformal2D(ConformalFactor::Poincare { lambda }) => Ok(poincare_distance(*lambda, x, x0)),
            MetricKind::Conformal2D(ConformalFactor::Custom(c)) => Err(Error::UnsupportedDistance(c.id().to_string())),
        }
    }

    /// Metric norm of a covector given by its flat components: `√(g^{ij} uᵢ uⱼ)`.
    pub fn covector_norm(&self, x: &[f64], flat: &[f64]) -> f64 {
        (norm_sq(flat) / self.factor_unchecked(x)).sqrt()
    }

    /// `g^{ij} aᵢ bⱼ` for covectors in flat components.
    pub fn covector_inner(&self, x: &[f64], a: &[f64], b: &[f64]) -> f64 {
        dot(a, b) / self.factor_unchecked(x)
    }

    /// Flat partial derivatives: closed form when the field provides them,
    /// otherwise fourth-order centered differences.
    pub fn flat_gradient(&self, f: &dyn ScalarField, x: &[f64], stencil: Stencil) -> Result<Vec<f64>> {
        self.check_point(x)?;
        if let Some(g) = f.gradient(x) {
            return finite_vec(x, g);
        }
        let h = stencil.h;
        let mut grad = Vec::with_capacity(x.len());
        let mut p = x.to_vec();
        for i in 0..x.len() {
            let s = self.axis_samples(f, &mut p, i, h)?;
            grad.push((-s[4] + 8.0 * s[3] - 8.0 * s[1] + s[0]) / (12.0 * h));
        }
        Ok(grad)
    }

    /// Flat Laplacian `Σ ∂ᵢᵢ f`.
    pub fn flat_laplacian(&self, f: &dyn ScalarField, x: &[f64], stencil: Stencil) -> Result<f64> {
        self.check_point(x)?;
        if let Some(l) = f.laplacian(x) {
            return finite(x, l);
        }
        let h = stencil.h;
        let mut p = x.to_vec();
        let mut lap = 0.0;
        for i in 0..x.len() {
            let s = self.axis_samples(f, &mut p, i, h)?;
            lap += (-s[4] + 16.0 * s[3] - 30.0 * s[2] + 16.0 * s[1] - s[0]) / (12.0 * h * h);
        }
        Ok(lap)
    }

    /// Laplace–Beltrami operator. For `g = φδ` in two dimensions this is
    /// `φ⁻¹ Σ ∂ᵢᵢ f`.
    pub fn laplace_beltrami(&self, f: &dyn ScalarField, x: &[f64], stencil: Stencil) -> Result<f64> {
        let lap = self.flat_laplacian(f, x, stencil)?;
        Ok(lap / self.factor_unchecked(x))
    }

    /// `|∇f|_g = √(g^{ij} fᵢ fⱼ)`.
    pub fn gradient_norm(&self, f: &dyn ScalarField, x: &[f64], stencil: Stencil) -> Result<f64> {
        let g = self.flat_gradient(f, x, stencil)?;
        Ok(self.covector_norm(x, &g))
    }

    // Samples f at x + j h eᵢ for j = −2..=2, checking the stencil stays inside.
    fn axis_samples(&self, f: &dyn ScalarField, p: &mut [f64], axis: usize, h: f64) -> Result<[f64; 5]> {
        let base = p[axis];
        let mut out = [0.0; 5];
        for (slot, j) in out.iter_mut().zip(-2i32..=2) {
            p[axis] = base + f64::from(j) * h;
            if !self.contains(p) {
                let point = p.to_vec();
                p[axis] = base;
                return Err(Error::StencilOutsideDomain { point });
            }
            let v = f.value(p);
            if !v.is_finite() {
                let point = p.to_vec();
                p[axis] = base;
                return Err(Error::NonFinite { point, value: v });
            }
            *slot = v;
        }
        p[axis] = base;
        Ok(out)
    }

    /// Points on the geodesic sphere `∂B(x0, r)` in two dimensions, evenly
    /// spaced in angle. Only available where distance is.
    pub fn geodesic_circle(&self, x0: &[f64], r: f64, count: usize) -> Result<Vec<[f64; 2]>> {
        if self.dim() != 2 {
            return Err(invalid("dim", "geodesic circles need a two-dimensional metric"));
        }
        self.check_point(x0)?;
        let angles = (0..count).map(|i| std::f64::consts::TAU * i as f64 / count as f64);
        match &self.kind {
            MetricKind::Euclidean { .. } => Ok(angles.map(|a| [x0[0] + r * a.cos(), x0[1] + r * a.sin()]).collect()),
            MetricKind::Conformal2D(ConformalFactor::Poincare { lambda }) => {
                let re = (r / (2.0 * lambda)).tanh();
                Ok(angles.map(|a| mobius_from_origin([x0[0], x0[1]], [re * a.cos(), re * a.sin()])).collect())
            }
            MetricKind::Conformal2D(ConformalFactor::Custom(c)) => Err(Error::UnsupportedDistance(c.id().to_string())),
        }
    }
}

/// `d(x, y) = 2λ artanh(|x − y| / |1 − x ȳ|)` with points read as complex numbers.
fn poincare_distance(lambda: f64, x: &[f64], y: &[f64]) -> f64 {
    let num = euclid_dist(x, y);
    if num == 0.0 {
        return 0.0;
    }
    let re = 1.0 - (x[0] * y[0] + x[1] * y[1]);
    let im = x[1] * y[0] - x[0] * y[1];
    let den = (re * re + im * im).sqrt();
    2.0 * lambda * (num / den).min(1.0).atanh()
}

/// Möbius isometry of the disk sending 0 to `a`: `z ↦ (z + a)/(1 + ā z)`.
fn mobius_from_origin(a: [f64; 2], z: [f64; 2]) -> [f64; 2] {
    let num = [z[0] + a[0], z[1] + a[1]];
    // 1 + ā z
    let den = [1.0 + a[0] * z[0] + a[1] * z[1], a[0] * z[1] - a[1] * z[0]];
    let d2 = den[0] * den[0] + den[1] * den[1];
    [(num[0] * den[0] + num[1] * den[1]) / d2, (num[1] * den[0] - num[0] * den[1]) / d2]
}

pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

pub(crate) fn euclid_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn finite(x: &[f64], v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { point: x.to_vec(), value: v })
    }
}

fn finite_vec(x: &[f64], g: Vec<f64>) -> Result<Vec<f64>> {
    match g.iter().find(|v| !v.is_finite()) {
        Some(&v) => Err(Error::NonFinite { point: x.to_vec(), value: v }),
        None => Ok(g),
    }
}
