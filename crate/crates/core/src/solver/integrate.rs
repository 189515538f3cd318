use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::MetricSpec;
use crate::solver::field::time_levels;
use crate::solver::{DomainSpec, Lattice, LatticeSpec, NodeKind, Provenance, Scheme, SolutionField};
use crate::source::SourceSpec;

/// Values below `POSITIVITY_FLOOR · M` abort a run.
pub const POSITIVITY_FLOOR: f64 = 1e-12;
const FIXED_POINT_ITERS: usize = 25;
const NEWTON_ITERS: usize = 25;
const CHUNK: usize = 4096;

pub type Sampler<'a> = &'a (dyn Fn(&[f64], f64) -> f64 + Sync);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub scheme: Scheme,
    pub lattice: LatticeSpec,
    pub dt: f64,
    /// Keep every `store_every`-th level (the last level is always kept).
    pub store_every: usize,
    pub declared_bound: Option<f64>,
}

impl SolveOptions {
    pub fn new(scheme: Scheme, lattice: LatticeSpec, dt: f64) -> Self {
        Self { scheme, lattice, dt, store_every: 1, declared_bound: None }
    }
}

/// Largest stable explicit step: `min φ / diag` over interior nodes.
pub fn explicit_step_limit(lattice: &Lattice) -> f64 {
    lattice
        .interior_nodes()
        .filter_map(|i| lattice.compact_laplacian_weights(i).map(|(d, _)| lattice.factor(i) / d))
        .fold(f64::INFINITY, f64::min)
}

// Interior rows of the compact operator `L`, with neighbors split into
// unknowns and Dirichlet nodes.
struct Rows {
    nodes: Vec<usize>,
    diag: Vec<f64>,
    inner: Vec<Vec<(usize, f64)>>,
    outer: Vec<Vec<(usize, f64)>>,
    phi: Vec<f64>,
    radial: bool,
}

impl Rows {
    fn new(lat: &Lattice) -> Result<Self> {
        let nodes: Vec<usize> = lat.interior_nodes().collect();
        let mut pos = vec![usize::MAX; lat.len()];
        for (r, &i) in nodes.iter().enumerate() {
            pos[i] = r;
        }
        let mut diag = Vec::with_capacity(nodes.len());
        let mut inner = Vec::with_capacity(nodes.len());
        let mut outer = Vec::with_capacity(nodes.len());
        for &i in &nodes {
            let (d, w) = lat.compact_laplacian_weights(i).ok_or_else(|| {
                Error::GridTooCoarse(format!("interior node {:?} lacks compact neighbors", lat.coords(i)))
            })?;
            diag.push(d);
            let (a, b): (Vec<_>, Vec<_>) = w.into_iter().partition(|&(q, _)| lat.kind(q) == NodeKind::Interior);
            inner.push(a.into_iter().map(|(q, c)| (pos[q], c)).collect());
            outer.push(b);
        }
        let phi = nodes.iter().map(|&i| lat.factor(i)).collect();
        Ok(Self { nodes, diag, inner, outer, phi, radial: lat.is_radial() })
    }

    fn len(&self) -> usize {
        self.nodes.len()
    }

    // (L u)_r using full node values.
    fn apply_full(&self, u: &[f64], r: usize) -> f64 {
        let p = u[self.nodes[r]];
        let mut s = 0.0;
        for &(q, c) in &self.inner[r] {
            s += c * (u[self.nodes[q]] - p);
        }
        for &(q, c) in &self.outer[r] {
            s += c * (u[q] - p);
        }
        s
    }

    // (A x)_r = (φ + θ diag + shift) x_r − θ Σ_inner c x_q
    fn apply(&self, theta: f64, shift: &[f64], x: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(r, o)| {
            let mut s = (self.phi[r] + theta * self.diag[r] + shift[r]) * x[r];
            for &(q, c) in &self.inner[r] {
                s -= theta * c * x[q];
            }
            *o = s;
        });
    }

    fn solve(&self, theta: f64, shift: &[f64], rhs: &[f64], x: &mut [f64], t: f64) -> Result<()> {
        if self.radial {
            self.thomas(theta, shift, rhs, x, t)
        } else {
            self.pcg(theta, shift, rhs, x, t)
        }
    }

    fn thomas(&self, theta: f64, shift: &[f64], rhs: &[f64], x: &mut [f64], t: f64) -> Result<()> {
        let n = self.len();
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut diag = vec![0.0; n];
        for r in 0..n {
            diag[r] = self.phi[r] + theta * self.diag[r] + shift[r];
            for &(q, c) in &self.inner[r] {
                if q + 1 == r {
                    lower[r] = -theta * c;
                } else if q == r + 1 {
                    upper[r] = -theta * c;
                }
            }
        }
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        for r in 0..n {
            let den = diag[r] - if r > 0 { lower[r] * cp[r - 1] } else { 0.0 };
            if den == 0.0 || !den.is_finite() {
                return Err(Error::Divergence { t, reason: "singular tridiagonal system".into() });
            }
            cp[r] = upper[r] / den;
            dp[r] = (rhs[r] - if r > 0 { lower[r] * dp[r - 1] } else { 0.0 }) / den;
        }
        for r in (0..n).rev() {
            x[r] = dp[r] - if r + 1 < n { cp[r] * x[r + 1] } else { 0.0 };
        }
        Ok(())
    }

    fn pcg(&self, theta: f64, shift: &[f64], rhs: &[f64], x: &mut [f64], t: f64) -> Result<()> {
        let n = self.len();
        let pre: Vec<f64> = (0..n).map(|r| 1.0 / (self.phi[r] + theta * self.diag[r] + shift[r])).collect();
        let mut ax = vec![0.0; n];
        self.apply(theta, shift, x, &mut ax);
        let mut res: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let target = 1e-13 * dot(rhs, rhs).sqrt().max(f64::MIN_POSITIVE);
        if dot(&res, &res).sqrt() <= target {
            return Ok(());
        }
        let mut z: Vec<f64> = res.iter().zip(&pre).map(|(r, p)| r * p).collect();
        let mut p = z.clone();
        let mut rz = dot(&res, &z);
        let mut ap = vec![0.0; n];
        for _ in 0..(10 * n).max(200) {
            self.apply(theta, shift, &p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Divergence { t, reason: "implicit system lost positive definiteness".into() });
            }
            let a = rz / pap;
            x.par_iter_mut().zip(&p).for_each(|(xi, pi)| *xi += a * pi);
            res.par_iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= a * api);
            if dot(&res, &res).sqrt() <= target {
                return Ok(());
            }
            z.par_iter_mut().zip(&res).zip(&pre).for_each(|((zi, ri), pi)| *zi = ri * pi);
            let rz_new = dot(&res, &z);
            let b = rz_new / rz;
            rz = rz_new;
            p.par_iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + b * *pi);
        }
        Err(Error::Divergence { t, reason: "conjugate gradients did not converge".into() })
    }
}

// Chunked so the summation order does not depend on the thread count.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let parts: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    parts.iter().sum()
}

fn source_at(
    source: &SourceSpec,
    lat: &Lattice,
    nodes: &[usize],
    t: f64,
    u: impl Fn(usize) -> f64 + Sync,
) -> Result<Vec<f64>> {
    nodes.par_iter().enumerate().map(|(r, &i)| source.eval(lat.coords(i), t, u(r))).collect()
}

/// Integrate `u_t = Δ_g u + S(x,t,u)` on the cylinder with Dirichlet data on
/// the cut-cell layer.
pub fn solve_parabolic(
    domain: &DomainSpec,
    metric: &MetricSpec,
    source: &SourceSpec,
    initial: Sampler<'_>,
    boundary: Sampler<'_>,
    opts: &SolveOptions,
) -> Result<SolutionField> {
    if opts.store_every == 0 {
        return Err(invalid("store_every", "must be at least 1"));
    }
    let lat = Arc::new(Lattice::build(opts.lattice, domain, metric)?);
    let rows = Rows::new(&lat)?;
    let (steps, dt) = time_levels(domain, opts.dt)?;
    if opts.scheme == Scheme::Explicit {
        let limit = explicit_step_limit(&lat);
        if dt > limit {
            return Err(Error::Cfl { dt, limit });
        }
    }
    let ts = domain.t_start();
    let bnodes: Vec<usize> = lat.boundary_nodes().collect();
    let mut u: Vec<f64> = (0..lat.len())
        .map(|i| match lat.kind(i) {
            NodeKind::Interior => initial(lat.coords(i), ts),
            NodeKind::Boundary => boundary(lat.coords(i), ts),
        })
        .collect();
    if let Some((i, &v)) = u.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(invalid("initial", format!("data must be positive and finite, got {v} at {:?}", lat.coords(i))));
    }
    let mut m_run = u.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut times = vec![ts];
    let mut stored = vec![u.clone()];
    let zero_source = matches!(source, SourceSpec::Zero);
    let n = rows.len();
    let zeros = vec![0.0; n];
    for k in 0..steps {
        let t = ts + k as f64 * dt;
        let t_new = if k + 1 == steps { domain.t0 } else { ts + (k + 1) as f64 * dt };
        let s_old =
            if zero_source { zeros.clone() } else { source_at(source, &lat, &rows.nodes, t, |r| u[rows.nodes[r]])? };
        let mut next = u.clone();
        for &b in &bnodes {
            next[b] = boundary(lat.coords(b), t_new);
        }
        match opts.scheme {
            Scheme::Explicit => {
                let upd: Vec<f64> = (0..n)
                    .into_par_iter()
                    .map(|r| u[rows.nodes[r]] + dt * (rows.apply_full(&u, r) / rows.phi[r] + s_old[r]))
                    .collect();
                for (r, v) in upd.into_iter().enumerate() {
                    next[rows.nodes[r]] = v;
                }
            }
            Scheme::CrankNicolson => {
                let theta = 0.5 * dt;
                // φE + θ Σ_outer c g_new, the part independent of the new interior values
                let base: Vec<f64> = (0..n)
                    .into_par_iter()
                    .map(|r| {
                        let i = rows.nodes[r];
                        let explicit =
                            rows.phi[r] * u[i] + theta * rows.apply_full(&u, r) + rows.phi[r] * theta * s_old[r];
                        let dirichlet: f64 = rows.outer[r].iter().map(|&(q, c)| c * next[q]).sum();
                        explicit + theta * dirichlet
                    })
                    .collect();
                let mut x: Vec<f64> = rows.nodes.iter().map(|&i| u[i]).collect();
                if zero_source {
                    rows.solve(theta, &zeros, &base, &mut x, t_new)?;
                } else {
                    implicit_source_step(&rows, &lat, source, theta, &base, &mut x, t_new, m_run)?;
                }
                for (r, v) in x.into_iter().enumerate() {
                    next[rows.nodes[r]] = v;
                }
            }
        }
        let floor = POSITIVITY_FLOOR * m_run;
        for (i, &v) in next.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Divergence { t: t_new, reason: format!("non-finite value at {:?}", lat.coords(i)) });
            }
            if v <= floor {
                return Err(Error::PositivityLoss { t: t_new, value: v, floor });
            }
        }
        m_run = next.iter().fold(m_run, |a, &b| a.max(b));
        u = next;
        if (k + 1) % opts.store_every == 0 || k + 1 == steps {
            times.push(t_new);
            stored.push(u.clone());
        }
    }
    let m_bound = match opts.declared_bound {
        Some(m) if m < m_run => return Err(Error::AboveBound { value: m_run, bound: m }),
        Some(m) => m,
        None => m_run,
    };
    let provenance = Provenance::FdSolve { scheme: opts.scheme, h: lat.h(), dt };
    SolutionField::from_parts(
        format!("fd-{:?}", opts.scheme).to_lowercase(),
        domain.clone(),
        metric.clone(),
        lat,
        times,
        stored,
        dt,
        m_bound,
        provenance,
    )
}

// Solve φx − θLx − θφS(x) = base: lagged source iterations, then Newton.
#[allow(clippy::too_many_arguments)]
fn implicit_source_step(
    rows: &Rows,
    lat: &Lattice,
    source: &SourceSpec,
    theta: f64,
    base: &[f64],
    x: &mut Vec<f64>,
    t: f64,
    scale: f64,
) -> Result<()> {
    let n = rows.len();
    let zeros = vec![0.0; n];
    let tol = 1e-13 * scale.max(1e-300);
    for _ in 0..FIXED_POINT_ITERS {
        let s = source_at(source, lat, &rows.nodes, t, |r| x[r])?;
        let rhs: Vec<f64> = (0..n).map(|r| base[r] + theta * rows.phi[r] * s[r]).collect();
        let mut y = x.clone();
        rows.solve(theta, &zeros, &rhs, &mut y, t)?;
        let change = y.iter().zip(x.iter()).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        *x = y;
        if !change.is_finite() {
            return Err(Error::Divergence { t, reason: "source iteration produced non-finite values".into() });
        }
        if change <= tol {
            return Ok(());
        }
    }
    let mut ax = vec![0.0; n];
    for _ in 0..NEWTON_ITERS {
        let s = source_at(source, lat, &rows.nodes, t, |r| x[r])?;
        let ds: Vec<f64> = rows
            .nodes
            .par_iter()
            .enumerate()
            .map(|(r, &i)| source.d_u(lat.coords(i), t, x[r]))
            .collect::<Result<_>>()?;
        rows.apply(theta, &zeros, x, &mut ax);
        let resid: Vec<f64> = (0..n).map(|r| base[r] + theta * rows.phi[r] * s[r] - ax[r]).collect();
        let shift: Vec<f64> = (0..n).map(|r| -theta * rows.phi[r] * ds[r]).collect();
        let mut delta = vec![0.0; n];
        rows.solve(theta, &shift, &resid, &mut delta, t)?;
        let step = delta.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        x.iter_mut().zip(&delta).for_each(|(a, d)| *a += d);
        if !step.is_finite() {
            return Err(Error::Divergence { t, reason: "Newton step is not finite".into() });
        }
        if step <= tol {
            return Ok(());
        }
    }
    Err(Error::Divergence { t, reason: "source iteration and Newton fallback both failed to converge".into() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{analytic_solution, AnalyticKind, GridSpec};

    fn domain() -> DomainSpec {
        DomainSpec::new(vec![0.0, 0.0], 1.0, 1.0, 0.5, 0.5, 0.25).unwrap()
    }

    #[test]
    fn constants_stay_constant() {
        let m = MetricSpec::euclidean(2).unwrap();
        let c = |_: &[f64], _: f64| 3.5;
        for scheme in [Scheme::Explicit, Scheme::CrankNicolson] {
            let opts = SolveOptions::new(scheme, LatticeSpec::Planar { h: 0.1 }, 0.002);
            let f = solve_parabolic(&domain(), &m, &SourceSpec::Zero, &c, &c, &opts).unwrap();
            for k in 0..f.times().len() {
                assert!(f.level(k).iter().all(|&v| v == 3.5), "{scheme:?}");
            }
        }
    }

    #[test]
    fn cfl_is_enforced() {
        let m = MetricSpec::euclidean(2).unwrap();
        let c = |_: &[f64], _: f64| 1.0;
        let opts = SolveOptions::new(Scheme::Explicit, LatticeSpec::Planar { h: 0.1 }, 0.01);
        assert!(matches!(solve_parabolic(&domain(), &m, &SourceSpec::Zero, &c, &c, &opts), Err(Error::Cfl { .. })));
    }

    #[test]
    fn linear_growth_matches_ode() {
        let m = MetricSpec::euclidean(2).unwrap();
        let d = domain();
        let ts = d.t_start();
        let c = 2.0;
        let exact = move |_: &[f64], t: f64| c * (t - ts).exp();
        let src = SourceSpec::Power { lambda: 1.0, alpha: 1.0 };
        let opts = SolveOptions::new(Scheme::CrankNicolson, LatticeSpec::Planar { h: 0.1 }, 0.01);
        let f = solve_parabolic(&d, &m, &src, &exact, &exact, &opts).unwrap();
        let last = f.times().len() - 1;
        let want = exact(&[0.0, 0.0], d.t0);
        for &v in f.level(last) {
            assert!((v - want).abs() / want < 1e-4, "{v} vs {want}");
        }
    }

    #[test]
    fn nonlinear_source_uses_iteration() {
        let m = MetricSpec::euclidean(2).unwrap();
        let d = domain();
        let ts = d.t_start();
        // u' = u² with u(ts) = 1/2 → u = 1/(2 − (t − ts))
        let exact = move |_: &[f64], t: f64| 1.0 / (2.0 - (t - ts));
        let src = SourceSpec::Power { lambda: 1.0, alpha: 2.0 };
        let opts = SolveOptions::new(Scheme::CrankNicolson, LatticeSpec::Planar { h: 0.1 }, 0.005);
        let f = solve_parabolic(&d, &m, &src, &exact, &exact, &opts).unwrap();
        let last = f.times().len() - 1;
        let want = exact(&[0.0, 0.0], d.t0);
        for &v in f.level(last) {
            assert!((v - want).abs() / want < 1e-4);
        }
    }

    #[test]
    fn positivity_loss_is_reported() {
        let m = MetricSpec::euclidean(2).unwrap();
        let one = |_: &[f64], _: f64| 1.0;
        let src = SourceSpec::Power { lambda: -200.0, alpha: 1.0 };
        let opts = SolveOptions::new(Scheme::Explicit, LatticeSpec::Planar { h: 0.2 }, 0.008);
        let r = solve_parabolic(&domain(), &m, &src, &one, &one, &opts);
        assert!(matches!(r, Err(Error::PositivityLoss { .. })), "{r:?}");
    }

    #[test]
    fn explicit_matches_gauss_kernel() {
        let m = MetricSpec::euclidean(2).unwrap();
        let d = DomainSpec::new(vec![0.0, 0.0], 1.0, 1.0, 0.5, 0.5, 0.25).unwrap();
        let g = AnalyticKind::GaussKernel { dim: 2 };
        let s = move |x: &[f64], t: f64| g.value(x, t);
        let opts = SolveOptions::new(Scheme::Explicit, LatticeSpec::Planar { h: 0.05 }, 0.0005);
        let f = solve_parabolic(&d, &m, &SourceSpec::Zero, &s, &s, &opts).unwrap();
        let exact = analytic_solution(g, &d, &m, &GridSpec { lattice: opts.lattice, dt: 0.0005 }).unwrap();
        let last = f.times().len() - 1;
        let err = (0..f.lattice().len()).fold(0.0f64, |a, i| a.max((f.value(i, last) - exact.value(i, last)).abs()));
        assert!(err < 2e-3, "{err}");
    }

    #[test]
    fn store_every_keeps_last_level() {
        let m = MetricSpec::euclidean(2).unwrap();
        let c = |_: &[f64], _: f64| 1.0;
        let mut opts = SolveOptions::new(Scheme::CrankNicolson, LatticeSpec::Planar { h: 0.2 }, 0.03);
        opts.store_every = 4;
        let f = solve_parabolic(&domain(), &m, &SourceSpec::Zero, &c, &c, &opts).unwrap();
        assert_eq!(*f.times().last().unwrap(), 1.0);
        assert_eq!(f.times()[0], 0.5);
    }
}
