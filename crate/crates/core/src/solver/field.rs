use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::MetricSpec;
use crate::solver::{AnalyticKind, DomainSpec, Lattice, LatticeSpec, NodeKind};
use crate::source::SourceSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Explicit,
    CrankNicolson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Analytic { solution: AnalyticKind },
    FdSolve { scheme: Scheme, h: f64, dt: f64 },
}

/// Spatial lattice plus a uniform time step; `dt` is rounded down so that it
/// divides the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lattice: LatticeSpec,
    pub dt: f64,
}

pub(crate) fn time_levels(domain: &DomainSpec, dt: f64) -> Result<(usize, f64)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    let steps = (domain.duration / dt - 1e-9).ceil().max(1.0);
    if steps > 1e8 {
        return Err(invalid("dt", format!("{steps} steps is too many")));
    }
    Ok((steps as usize, domain.duration / steps))
}

/// A positive function sampled on lattice nodes at a sequence of times.
#[derive(Debug, Clone)]
pub struct SolutionField {
    pub id: String,
    domain: DomainSpec,
    metric: MetricSpec,
    lattice: Arc<Lattice>,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    dt: f64,
    m_bound: f64,
    provenance: Provenance,
    closed_form: Option<AnalyticKind>,
    scale: f64,
}

impl SolutionField {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        id: String,
        domain: DomainSpec,
        metric: MetricSpec,
        lattice: Arc<Lattice>,
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
        dt: f64,
        m_bound: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        if times.len() != values.len() || values.iter().any(|v| v.len() != lattice.len()) {
            return Err(Error::Mismatch("time levels and node values disagree in size".into()));
        }
        let closed_form = match provenance {
            Provenance::Analytic { solution } => Some(solution),
            Provenance::FdSolve { .. } => None,
        };
        let f = Self { id, domain, metric, lattice, times, values, dt, m_bound, provenance, closed_form, scale: 1.0 };
        let (lo, hi) = f.value_range();
        if !(lo > 0.0) {
            return Err(Error::NonPositiveU(lo));
        }
        if hi > m_bound {
            return Err(Error::AboveBound { value: hi, bound: m_bound });
        }
        Ok(f)
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn metric(&self) -> &MetricSpec {
        &self.metric
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn value(&self, node: usize, k: usize) -> f64 {
        self.values[k][node]
    }

    pub fn h(&self) -> f64 {
        self.lattice.h()
    }

    /// Step used to produce the levels (stored levels may be a subsequence).
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// The declared bound `M ≥ sup u`.
    pub fn m_bound(&self) -> f64 {
        self.m_bound
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn closed_form(&self) -> Option<AnalyticKind> {
        self.closed_form
    }

    /// `(min, max)` over all nodes and levels.
    pub fn value_range(&self) -> (f64, f64) {
        self.values.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Raise the declared bound; lowering below the observed maximum is an error.
    pub fn with_declared_bound(mut self, m: f64) -> Result<Self> {
        let (_, hi) = self.value_range();
        if !(m >= hi) {
            return Err(Error::AboveBound { value: hi, bound: m });
        }
        self.m_bound = m;
        Ok(self)
    }

    /// `c·u` with bound `c·M`, keeping closed-form derivatives consistent.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid("c", format!("scale must be positive, got {c}")));
        }
        let mut f = self.clone();
        f.values.iter_mut().flatten().for_each(|v| *v *= c);
        f.m_bound *= c;
        f.scale *= c;
        Ok(f)
    }

    /// Flat gradient at a node: closed form when registered, stencils otherwise.
    pub fn flat_gradient(&self, node: usize, k: usize) -> Option<Vec<f64>> {
        if let Some((kind, c)) = self.exact() {
            let mut g = kind.gradient(self.lattice.coords(node), self.times[k]);
            g.iter_mut().for_each(|v| *v *= c);
            return Some(g);
        }
        self.lattice.gradient(&self.values[k], node)
    }

    /// `|∇u|_g / u` at a node.
    pub fn log_gradient(&self, node: usize, k: usize) -> Option<f64> {
        let g = self.flat_gradient(node, k)?;
        Some(self.metric.covector_norm(self.lattice.coords(node), &g) / self.values[k][node])
    }

    /// Laplace–Beltrami of the stored values by lattice stencils.
    pub fn grid_laplace_beltrami(&self, node: usize, k: usize) -> Option<f64> {
        self.lattice.laplace_beltrami(&self.values[k], node)
    }

    /// Second-order time derivative from three stored levels.
    pub fn grid_time_derivative(&self, node: usize, k: usize) -> Option<f64> {
        time_derivative(&self.times, |j| self.values[j][node], k)
    }

    pub(crate) fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub(crate) fn exact(&self) -> Option<(AnalyticKind, f64)> {
        self.closed_form.map(|kind| (kind, self.scale))
    }
}

/// Three-point derivative on a nonuniform grid; one-sided at the ends.
pub(crate) fn time_derivative(times: &[f64], u: impl Fn(usize) -> f64, k: usize) -> Option<f64> {
    let n = times.len();
    if n < 3 {
        return None;
    }
    let (i0, i1, i2) = if k == 0 {
        (0, 1, 2)
    } else if k == n - 1 {
        (n - 3, n - 2, n - 1)
    } else {
        (k - 1, k, k + 1)
    };
    let (t0, t1, t2) = (times[i0], times[i1], times[i2]);
    let t = times[k];
    // derivative of the quadratic interpolant at t
    let l0 = ((t - t1) + (t - t2)) / ((t0 - t1) * (t0 - t2));
    let l1 = ((t - t0) + (t - t2)) / ((t1 - t0) * (t1 - t2));
    let l2 = ((t - t0) + (t - t1)) / ((t2 - t0) * (t2 - t1));
    Some(l0 * u(i0) + l1 * u(i1) + l2 * u(i2))
}

/// Sample a closed-form solution on the lattice; `M` is its exact supremum on the cylinder.
pub fn analytic_solution(
    kind: AnalyticKind,
    domain: &DomainSpec,
    metric: &MetricSpec,
    grid: &GridSpec,
) -> Result<SolutionField> {
    let (_, sup) = kind.exact_range(domain, metric)?;
    let lattice = Arc::new(Lattice::build(grid.lattice, domain, metric)?);
    let (steps, dt) = time_levels(domain, grid.dt)?;
    let times: Vec<f64> =
        (0..=steps).map(|k| if k == steps { domain.t0 } else { domain.t_start() + k as f64 * dt }).collect();
    let values: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| (0..lattice.len()).into_par_iter().map(|i| kind.value(lattice.coords(i), t)).collect())
        .collect();
    // the cut-cell layer may sit slightly outside the ball
    let observed = values.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    SolutionField::from_parts(
        format!("{kind:?}"),
        domain.clone(),
        metric.clone(),
        lattice,
        times,
        values,
        dt,
        sup.max(observed),
        Provenance::Analytic { solution: kind },
    )
}

/// `max |u_t − Δ_g u − S|` over interior nodes with a full stencil and interior time levels.
pub fn pde_residual(field: &SolutionField, source: &SourceSpec) -> Result<f64> {
    let lat = field.lattice();
    if field.times().len() < 3 {
        return Err(Error::GridTooCoarse("need at least three time levels".into()));
    }
    let nodes: Vec<usize> = lat
        .interior_nodes()
        .filter(|&i| lat.kind(i) == NodeKind::Interior && lat.flat_laplacian(field.level(0), i).is_some())
        .collect();
    if nodes.is_empty() {
        return Err(Error::GridTooCoarse("no interior node has a full stencil".into()));
    }
    let mut worst = 0.0f64;
    for k in 1..field.times().len() - 1 {
        let t = field.times()[k];
        let r = nodes
            .par_iter()
            .map(|&i| -> Result<f64> {
                let ut = field.grid_time_derivative(i, k).expect("three levels");
                let lap = field.grid_laplace_beltrami(i, k).expect("stencil checked");
                let s = source.eval(lat.coords(i), t, field.value(i, k))?;
                Ok((ut - lap - s).abs())
            })
            .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
        worst = worst.max(r);
    }
    Ok(worst)
}
