//! Node sets for fields on a geodesic ball.
//!
//! `Planar` is a Cartesian lattice through `x₀` (two dimensions, flat or
//! conformal). `Radial` is the 1-D grid `rᵢ = i h` on `[0, R]` for radially
//! symmetric data in any dimension; the Laplacian picks up `(n−1)/r ∂ᵣ`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::MetricSpec;
use crate::solver::DomainSpec;
use crate::source::bounding_box;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatticeSpec {
    Planar {
        h: f64,
    },
    /// `h` is rounded down so that `R/h` is an integer.
    Radial {
        h: f64,
    },
}

impl LatticeSpec {
    pub fn requested_h(&self) -> f64 {
        match self {
            Self::Planar { h } | Self::Radial { h } => *h,
        }
    }

    /// Same lattice kind with the spacing divided by `2^levels`.
    pub fn refined(&self, levels: u32) -> Self {
        let f = f64::from(1u32 << levels);
        match self {
            Self::Planar { h } => Self::Planar { h: h / f },
            Self::Radial { h } => Self::Radial { h: h / f },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    /// `d(x, x₀) < R − h_g/2`, `h_g` the local geodesic size of one step.
    Interior,
    /// Cut-cell layer: outside the interior set, adjacent to it.
    Boundary,
}

// Offsets −2, −1, +1, +2 along one axis.
type AxisNeighbors = [Option<u32>; 4];

#[derive(Debug, Clone)]
enum Layout {
    Planar { neighbors: Vec<[AxisNeighbors; 2]> },
    Radial { dim: usize },
}

#[derive(Debug, Clone)]
pub struct Lattice {
    spec: LatticeSpec,
    h: f64,
    layout: Layout,
    coords: Vec<Vec<f64>>,
    dist: Vec<f64>,
    kind: Vec<NodeKind>,
    factor: Vec<f64>,
}

impl Lattice {
    pub fn build(spec: LatticeSpec, domain: &DomainSpec, metric: &MetricSpec) -> Result<Self> {
        domain.validate()?;
        if domain.x0.len() != metric.dim() {
            return Err(Error::Mismatch(format!(
                "domain center has {} coordinates, metric has dimension {}",
                domain.x0.len(),
                metric.dim()
            )));
        }
        let h = spec.requested_h();
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid("h", format!("spacing must be positive, got {h}")));
        }
        match spec {
            LatticeSpec::Planar { h } => Self::planar(spec, h, domain, metric),
            LatticeSpec::Radial { h } => Self::radial(spec, h, domain, metric),
        }
    }

    fn planar(spec: LatticeSpec, h: f64, domain: &DomainSpec, metric: &MetricSpec) -> Result<Self> {
        if metric.dim() != 2 {
            return Err(Error::Mismatch(format!(
                "planar lattices are two-dimensional; use a radial lattice for n = {}",
                metric.dim()
            )));
        }
        let (lo, hi) = bounding_box(metric, domain)?;
        let x0 = [domain.x0[0], domain.x0[1]];
        let steps = |a: usize| {
            let lo_i = ((lo[a] - x0[a]) / h).floor() as i64 - 2;
            let hi_i = ((hi[a] - x0[a]) / h).ceil() as i64 + 2;
            (lo_i, hi_i)
        };
        let (i_lo, i_hi) = steps(0);
        let (j_lo, j_hi) = steps(1);
        let nx = (i_hi - i_lo + 1) as usize;
        let ny = (j_hi - j_lo + 1) as usize;
        if nx.saturating_mul(ny) > 50_000_000 {
            return Err(invalid("h", format!("lattice of {nx}×{ny} points is too large")));
        }
        let point = |i: i64, j: i64| [x0[0] + i as f64 * h, x0[1] + j as f64 * h];
        let mut interior = vec![false; nx * ny];
        let mut dist = vec![f64::NAN; nx * ny];
        for jj in 0..ny {
            for ii in 0..nx {
                let p = point(i_lo + ii as i64, j_lo + jj as i64);
                if !metric.contains(&p) {
                    continue;
                }
                let d = metric.geodesic_distance(&p, &domain.x0)?;
                dist[jj * nx + ii] = d;
                let hg = h * metric.factor_unchecked(&p).sqrt();
                interior[jj * nx + ii] = d < domain.radius - 0.5 * hg;
            }
        }
        let mut slot: Vec<Option<u32>> = vec![None; nx * ny];
        let mut coords = Vec::new();
        let mut node_dist = Vec::new();
        let mut kind = Vec::new();
        let mut factor = Vec::new();
        for jj in 0..ny {
            for ii in 0..nx {
                let g = jj * nx + ii;
                let k = if interior[g] {
                    NodeKind::Interior
                } else {
                    let near = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].iter().any(|&(di, dj)| {
                        let (a, b) = (ii as i64 + di, jj as i64 + dj);
                        a >= 0
                            && b >= 0
                            && (a as usize) < nx
                            && (b as usize) < ny
                            && interior[b as usize * nx + a as usize]
                    });
                    if !near {
                        continue;
                    }
                    let p = point(i_lo + ii as i64, j_lo + jj as i64);
                    if !metric.contains(&p) {
                        return Err(Error::GridTooCoarse(format!(
                            "boundary-layer node {p:?} falls outside the metric domain; refine h = {h}"
                        )));
                    }
                    NodeKind::Boundary
                };
                let p = point(i_lo + ii as i64, j_lo + jj as i64);
                slot[g] = Some(coords.len() as u32);
                factor.push(metric.factor_unchecked(&p));
                coords.push(p.to_vec());
                node_dist.push(dist[g]);
                kind.push(k);
            }
        }
        if !kind.contains(&NodeKind::Interior) {
            return Err(Error::GridTooCoarse(format!("no interior nodes at h = {h}")));
        }
        let lookup = |ii: i64, jj: i64| -> Option<u32> {
            if ii < 0 || jj < 0 || ii as usize >= nx || jj as usize >= ny {
                None
            } else {
                slot[jj as usize * nx + ii as usize]
            }
        };
        let mut neighbors = vec![[[None; 4]; 2]; coords.len()];
        for jj in 0..ny as i64 {
            for ii in 0..nx as i64 {
                let Some(n) = lookup(ii, jj) else { continue };
                let nb = &mut neighbors[n as usize];
                for (s, off) in [-2i64, -1, 1, 2].into_iter().enumerate() {
                    nb[0][s] = lookup(ii + off, jj);
                    nb[1][s] = lookup(ii, jj + off);
                }
            }
        }
        Ok(Self { spec, h, layout: Layout::Planar { neighbors }, coords, dist: node_dist, kind, factor })
    }

    fn radial(spec: LatticeSpec, h: f64, domain: &DomainSpec, metric: &MetricSpec) -> Result<Self> {
        if !metric.is_euclidean() {
            return Err(Error::Mismatch("radial lattices need a Euclidean metric".into()));
        }
        let n = (domain.radius / h - 1e-9).ceil().max(2.0) as usize;
        let h = domain.radius / n as f64;
        let mut coords = Vec::with_capacity(n + 1);
        let mut dist = Vec::with_capacity(n + 1);
        let mut kind = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let r = if i == n { domain.radius } else { i as f64 * h };
            let mut x = domain.x0.clone();
            x[0] += r;
            coords.push(x);
            dist.push(r);
            kind.push(if i == n { NodeKind::Boundary } else { NodeKind::Interior });
        }
        let factor = vec![1.0; n + 1];
        Ok(Self { spec, h, layout: Layout::Radial { dim: metric.dim() }, coords, dist, kind, factor })
    }

    pub fn spec(&self) -> LatticeSpec {
        self.spec
    }

    /// Actual spacing (radial lattices round the request).
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn is_radial(&self) -> bool {
        matches!(self.layout, Layout::Radial { .. })
    }

    /// Number of spatial axes the stencils act on.
    pub fn axes(&self) -> usize {
        match self.layout {
            Layout::Planar { .. } => 2,
            Layout::Radial { .. } => 1,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self, i: usize) -> &[f64] {
        &self.coords[i]
    }

    pub fn distance(&self, i: usize) -> f64 {
        self.dist[i]
    }

    pub fn kind(&self, i: usize) -> NodeKind {
        self.kind[i]
    }

    pub fn factor(&self, i: usize) -> f64 {
        self.factor[i]
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.kind[i] == NodeKind::Interior)
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.kind[i] == NodeKind::Boundary)
    }

    /// Index of the node `offset` steps along `axis`, with mirror ghosts at
    /// the radial origin.
    pub(crate) fn neighbor(&self, i: usize, axis: usize, offset: i32) -> Option<usize> {
        match &self.layout {
            Layout::Planar { neighbors } => {
                let s = match offset {
                    -2 => 0,
                    -1 => 1,
                    1 => 2,
                    2 => 3,
                    _ => return None,
                };
                neighbors[i][axis][s].map(|n| n as usize)
            }
            Layout::Radial { .. } => {
                let j = (i as i64 + i64::from(offset)).unsigned_abs() as usize;
                (j < self.len()).then_some(j)
            }
        }
    }

    /// Whether the node has all four axis neighbors at distance one and two,
    /// i.e. fourth-order stencils apply.
    pub fn has_wide_stencil(&self, i: usize) -> bool {
        (0..self.axes()).all(|a| [-2, -1, 1, 2].iter().all(|&o| self.neighbor(i, a, o).is_some()))
    }

    // Derivative of `u` along one axis, best available order.
    fn axis_d1(&self, u: &[f64], i: usize, axis: usize) -> Option<f64> {
        let h = self.h;
        let at = |o: i32| self.neighbor(i, axis, o).map(|j| u[j]);
        match (at(-2), at(-1), at(1), at(2)) {
            (Some(m2), Some(m1), Some(p1), Some(p2)) => Some((-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h)),
            (_, Some(m1), Some(p1), _) => Some((p1 - m1) / (2.0 * h)),
            (_, None, Some(p1), Some(p2)) => Some((-3.0 * u[i] + 4.0 * p1 - p2) / (2.0 * h)),
            (Some(m2), Some(m1), None, _) => Some((3.0 * u[i] - 4.0 * m1 + m2) / (2.0 * h)),
            _ => None,
        }
    }

    fn axis_d2(&self, u: &[f64], i: usize, axis: usize) -> Option<f64> {
        let h2 = self.h * self.h;
        let at = |o: i32| self.neighbor(i, axis, o).map(|j| u[j]);
        match (at(-2), at(-1), at(1), at(2)) {
            (Some(m2), Some(m1), Some(p1), Some(p2)) => {
                Some((-p2 + 16.0 * p1 - 30.0 * u[i] + 16.0 * m1 - m2) / (12.0 * h2))
            }
            (_, Some(m1), Some(p1), _) => Some((p1 - 2.0 * u[i] + m1) / h2),
            _ => None,
        }
    }

    /// Flat partial derivatives of a node function.
    pub fn gradient(&self, u: &[f64], i: usize) -> Option<Vec<f64>> {
        match self.layout {
            Layout::Planar { .. } => Some(vec![self.axis_d1(u, i, 0)?, self.axis_d1(u, i, 1)?]),
            Layout::Radial { dim } => {
                let mut g = vec![0.0; dim];
                if i > 0 {
                    g[0] = self.axis_d1(u, i, 0)?;
                }
                Some(g)
            }
        }
    }

    /// Flat Laplacian of a node function (fourth order where the wide stencil fits).
    pub fn flat_laplacian(&self, u: &[f64], i: usize) -> Option<f64> {
        match self.layout {
            Layout::Planar { .. } => Some(self.axis_d2(u, i, 0)? + self.axis_d2(u, i, 1)?),
            Layout::Radial { dim } => {
                if self.kind[i] == NodeKind::Boundary {
                    return None;
                }
                let urr = self.axis_d2(u, i, 0)?;
                if i == 0 {
                    Some(dim as f64 * urr)
                } else {
                    let ur = self.axis_d1(u, i, 0)?;
                    Some(urr + (dim as f64 - 1.0) / self.dist[i] * ur)
                }
            }
        }
    }

    /// `φ⁻¹ Σ ∂ᵢᵢ u`.
    pub fn laplace_beltrami(&self, u: &[f64], i: usize) -> Option<f64> {
        self.flat_laplacian(u, i).map(|l| l / self.factor[i])
    }

    /// Second-order compact Laplacian used by the time integrators, written as
    /// `(Σ_q c_q u_q − c_self u_i)`: returns `(diag, [(neighbor, coeff)])`.
    pub(crate) fn compact_laplacian_weights(&self, i: usize) -> Option<(f64, Vec<(usize, f64)>)> {
        let h2 = self.h * self.h;
        match self.layout {
            Layout::Planar { .. } => {
                let mut w = Vec::with_capacity(4);
                for axis in 0..2 {
                    for o in [-1, 1] {
                        w.push((self.neighbor(i, axis, o)?, 1.0 / h2));
                    }
                }
                Some((4.0 / h2, w))
            }
            Layout::Radial { dim } => {
                let n = dim as f64;
                if i == 0 {
                    return Some((2.0 * n / h2, vec![(1, 2.0 * n / h2)]));
                }
                let up = self.neighbor(i, 0, 1)?;
                let r = self.dist[i];
                let c = (n - 1.0) / (2.0 * r * self.h);
                Some((2.0 / h2, vec![(i - 1, 1.0 / h2 - c), (up, 1.0 / h2 + c)]))
            }
        }
    }
}
