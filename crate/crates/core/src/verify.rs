//! Checking bounds against fields, calibrating the constant, and the
//! differential inequality for `w`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimate::{
    corollary_bound, region_from_distance, regional_w_bounds, BoundaryTraces, CorollaryKind, CorollaryParams,
    EstimateConstants, Region, RegionCoefficients,
};
use crate::solver::{DomainSpec, SolutionField};
use crate::source::SourceAnalysis;

/// Lower and upper ends of the calibration search.
pub const C_MIN: f64 = 1.0 / 1_048_576.0;
pub const C_MAX: f64 = 1_048_576.0;
/// Default `c` in `tol(h) = c (h² + dt²)(1 + max|w|)²`.
pub const LEMMA_TOL_CONSTANT: f64 = 10.0;
const MAX_LISTED: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimateKind {
    /// `|∇u|/u ≤ (C𝒞 + 𝒵)(1 + ln(M/u))` on the whole cylinder.
    Theorem,
    /// `w` against the bound of its region.
    RegionalW,
    Corollary {
        corollary: CorollaryKind,
    },
}

impl EstimateKind {
    pub fn id(&self) -> String {
        match self {
            Self::Theorem => "theorem".into(),
            Self::RegionalW => "regional_w".into(),
            Self::Corollary { corollary } => corollary.name().into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Subregion {
    All,
    /// `Q_{R/2,T/2}`.
    HalfCylinder,
    Region {
        region: Region,
    },
}

impl Subregion {
    fn admits(&self, s: &NodeSample) -> bool {
        match self {
            Self::All => true,
            Self::HalfCylinder => s.half,
            Self::Region { region } => s.region == *region,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSample {
    pub x: Vec<f64>,
    pub t: f64,
    pub region: Region,
    half: bool,
    /// `|∇u|_g / u`
    pub log_grad: f64,
    /// `1 + ln(M/u)`
    pub log_factor: f64,
}

/// A field reduced to what the checks need, so that calibration does not
/// recompute gradients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreparedField {
    pub field_id: String,
    pub domain: DomainSpec,
    pub k: f64,
    pub m_sup: f64,
    pub m_inf: f64,
    pub analysis: SourceAnalysis,
    pub traces: BoundaryTraces,
    pub constants: EstimateConstants,
    pub samples: Vec<NodeSample>,
}

/// Gradient samples at interior nodes (distance below `R`) of every level.
/// `m_inf` defaults to the field minimum.
pub fn prepare_field(
    field: &SolutionField,
    analysis: SourceAnalysis,
    traces: BoundaryTraces,
    m_inf: Option<f64>,
) -> Result<PreparedField> {
    let domain = field.domain().clone();
    let k = field.metric().ricci_lower_bound();
    let m = field.m_bound();
    let lat = field.lattice();
    let nodes: Vec<usize> = lat.interior_nodes().filter(|&i| lat.distance(i) <= domain.radius).collect();
    let mut samples = Vec::with_capacity(nodes.len() * field.times().len());
    for (lvl, &t) in field.times().iter().enumerate() {
        let part: Vec<NodeSample> = nodes
            .par_iter()
            .map(|&i| {
                let u = field.value(i, lvl);
                let g = field
                    .log_gradient(i, lvl)
                    .ok_or_else(|| Error::GridTooCoarse(format!("no gradient stencil at {:?}", lat.coords(i))))?;
                let d = lat.distance(i);
                Ok(NodeSample {
                    x: lat.coords(i).to_vec(),
                    t,
                    region: region_from_distance(d, t, &domain)?,
                    half: domain.in_half_cylinder(d, t),
                    log_grad: g,
                    log_factor: crate::estimate::log_factor(u, m)?,
                })
            })
            .collect::<Result<_>>()?;
        samples.extend(part);
    }
    let (lo, _) = field.value_range();
    let m_inf = m_inf.unwrap_or(lo);
    Ok(PreparedField {
        field_id: field.id.clone(),
        constants: EstimateConstants::new(&analysis, &domain, k)?,
        domain,
        k,
        m_sup: m,
        m_inf,
        analysis,
        traces,
        samples,
    })
}

impl PreparedField {
    fn corollary_params(&self) -> CorollaryParams {
        CorollaryParams {
            k: self.k,
            radius: self.domain.radius,
            duration: self.domain.duration,
            m_sup: self.m_sup,
            m_inf: self.m_inf,
            c_script: self.constants.c_script,
            traces: self.traces,
        }
    }

    // (lhs, rhs) pairs of the checked samples, in sample order.
    fn pairs(&self, est: EstimateKind, c: f64, sub: Subregion) -> Result<Vec<(usize, f64, f64)>> {
        let picked = self.samples.iter().enumerate().filter(|(_, s)| sub.admits(s));
        Ok(match est {
            EstimateKind::Theorem => {
                let rc = RegionCoefficients::new(&self.traces, &self.constants, c)?;
                let cc = c * self.constants.c_script;
                picked.map(|(i, s)| (i, s.log_grad, (cc + rc.of(s.region)) * s.log_factor)).collect()
            }
            EstimateKind::RegionalW => {
                let wb = regional_w_bounds(&self.traces, &self.constants, c)?;
                picked.map(|(i, s)| (i, (s.log_grad / s.log_factor).powi(2), wb.of(s.region))).collect()
            }
            EstimateKind::Corollary { corollary } => {
                let coef = corollary_bound(corollary, &self.corollary_params(), c)?;
                let sq = corollary.is_squared();
                picked
                    .filter(|(_, s)| s.half)
                    .map(|(i, s)| {
                        if sq {
                            (i, s.log_grad.powi(2), coef * s.log_factor.powi(2))
                        } else {
                            (i, s.log_grad, coef * s.log_factor)
                        }
                    })
                    .collect()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub x: Vec<f64>,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub estimate_id: String,
    pub field_id: String,
    pub c_used: f64,
    pub subregion: Subregion,
    pub checked_nodes: usize,
    /// `min (RHS − LHS)`; `+∞` when nothing was checked.
    pub min_slack: f64,
    /// `max LHS/RHS` (0/0 counts as 0).
    pub max_ratio: f64,
    pub witness: Option<Violation>,
    pub violation_count: usize,
    /// The first violations in node order.
    pub violations: Vec<Violation>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else if rhs > 0.0 {
        lhs / rhs
    } else {
        f64::INFINITY
    }
}

pub fn check_prepared(p: &PreparedField, est: EstimateKind, c: f64, sub: Subregion) -> Result<BoundReport> {
    let pairs = p.pairs(est, c, sub)?;
    let mut min_slack = f64::INFINITY;
    let mut max_ratio = 0.0f64;
    let mut witness = None;
    let mut violations = Vec::new();
    let mut count = 0;
    let make = |i: usize, lhs: f64, rhs: f64| Violation { x: p.samples[i].x.clone(), t: p.samples[i].t, lhs, rhs };
    for &(i, lhs, rhs) in &pairs {
        min_slack = min_slack.min(rhs - lhs);
        let r = ratio(lhs, rhs);
        if witness.is_none() || r > max_ratio {
            max_ratio = r;
            witness = Some(make(i, lhs, rhs));
        }
        if lhs > rhs {
            count += 1;
            if violations.len() < MAX_LISTED {
                violations.push(make(i, lhs, rhs));
            }
        }
    }
    Ok(BoundReport {
        estimate_id: est.id(),
        field_id: p.field_id.clone(),
        c_used: c,
        subregion: sub,
        checked_nodes: pairs.len(),
        min_slack,
        max_ratio,
        witness,
        violation_count: count,
        violations,
    })
}

pub fn check_estimate(
    field: &SolutionField,
    analysis: SourceAnalysis,
    traces: BoundaryTraces,
    est: EstimateKind,
    c: f64,
    sub: Subregion,
) -> Result<BoundReport> {
    check_prepared(&prepare_field(field, analysis, traces, None)?, est, c, sub)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub estimate_id: String,
    /// Smallest tested `C` at which every field passes.
    pub c_star: f64,
    /// Largest tested `C` at which some field fails (the lower search end if none).
    pub c_fail: f64,
    pub iterations: usize,
    pub witness_field: Option<String>,
    pub witness: Option<Violation>,
}

fn all_pass(fields: &[PreparedField], est: EstimateKind, c: f64, sub: Subregion) -> Result<Option<BoundReport>> {
    for f in fields {
        let r = check_prepared(f, est, c, sub)?;
        if !r.passed() {
            return Ok(Some(r));
        }
    }
    Ok(None)
}

/// Log-scale bisection for the least `C ∈ [2⁻²⁰, 2²⁰]` passing on every field,
/// to relative tolerance `tol`.
pub fn calibrate_c(fields: &[PreparedField], est: EstimateKind, sub: Subregion, tol: f64) -> Result<Calibration> {
    if fields.is_empty() {
        return Err(Error::EmptyFieldList);
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(invalid("tolerance", format!("must lie in (0,1), got {tol}")));
    }
    if all_pass(fields, est, C_MAX, sub)?.is_some() {
        return Err(Error::Infeasible { c_max: C_MAX });
    }
    let mut iterations = 1;
    let first = all_pass(fields, est, C_MIN, sub)?;
    iterations += 1;
    let Some(mut fail) = first else {
        return Ok(Calibration {
            estimate_id: est.id(),
            c_star: C_MIN,
            c_fail: C_MIN,
            iterations,
            witness_field: None,
            witness: None,
        });
    };
    let (mut lo, mut hi) = (C_MIN, C_MAX);
    while hi / lo - 1.0 > tol {
        let mid = (lo * hi).sqrt();
        iterations += 1;
        match all_pass(fields, est, mid, sub)? {
            None => hi = mid,
            Some(r) => {
                lo = mid;
                fail = r;
            }
        }
    }
    Ok(Calibration {
        estimate_id: est.id(),
        c_star: hi,
        c_fail: lo,
        iterations,
        witness_field: Some(fail.field_id.clone()),
        witness: fail.witness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    pub x: Vec<f64>,
    pub t: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaResidual {
    pub min_residual: f64,
    /// `max(0, −min_residual)`.
    pub violation: f64,
    pub tol: f64,
    pub passes: bool,
    pub checked: usize,
    pub witness: Option<ResidualSample>,
}

/// Pointwise `(Δw − w_t)/2 − [(1−v)w² + v⟨∇w,∇v⟩/(1−v) − γ|∇v|/(1−v)² − μw]`
/// away from a collar of two steps and the first level.
pub fn lemma_residual_samples(field: &SolutionField, analysis: &SourceAnalysis) -> Result<Vec<ResidualSample>> {
    if field.times().len() < 3 {
        return Err(Error::InsufficientSmoothness("need at least three time levels".into()));
    }
    let lat = field.lattice();
    let metric = field.metric();
    let m = field.m_bound();
    let n = lat.len();
    let levels = field.times().len();
    // w and ∇v (flat) on every node where a gradient exists
    let mut w = vec![vec![f64::NAN; n]; levels];
    let mut gv = vec![vec![None; n]; levels];
    for k in 0..levels {
        let rows: Vec<(f64, Option<Vec<f64>>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let u = field.value(i, k);
                match field.flat_gradient(i, k) {
                    Some(g) => {
                        let g: Vec<f64> = g.iter().map(|d| d / u).collect();
                        let v = (u / m).ln();
                        let nv = metric.covector_norm(lat.coords(i), &g);
                        ((nv / (1.0 - v)).powi(2), Some(g))
                    }
                    None => (f64::NAN, None),
                }
            })
            .collect();
        for (i, (wi, gi)) in rows.into_iter().enumerate() {
            w[k][i] = wi;
            gv[k][i] = gi;
        }
    }
    let collar = |i: usize| 2.0 * lat.h() * lat.factor(i).sqrt();
    let nodes: Vec<usize> = lat
        .interior_nodes()
        .filter(|&i| lat.distance(i) < field.domain().radius - collar(i) && lat.has_wide_stencil(i))
        .collect();
    let (gamma, mu) = (analysis.gamma, analysis.mu);
    let mut out = Vec::new();
    for k in 1..levels {
        let t = field.times()[k];
        let part: Vec<Option<ResidualSample>> = nodes
            .par_iter()
            .map(|&i| {
                let x = lat.coords(i);
                let lap = lat.laplace_beltrami(&w[k], i)?;
                let gw = lat.gradient(&w[k], i)?;
                let wt = crate::solver::time_derivative_of(field.times(), |j| w[j][i], k)?;
                let g = gv[k][i].as_ref()?;
                if !(lap.is_finite() && wt.is_finite() && gw.iter().all(|d| d.is_finite())) {
                    return None;
                }
                let u = field.value(i, k);
                let v = (u / m).ln();
                let wi = w[k][i];
                let one_v = 1.0 - v;
                let rhs = one_v * wi * wi + v * metric.covector_inner(x, &gw, g) / one_v
                    - gamma * metric.covector_norm(x, g) / (one_v * one_v)
                    - mu * wi;
                Some(ResidualSample { x: x.to_vec(), t, residual: 0.5 * (lap - wt) - rhs })
            })
            .collect();
        out.extend(part.into_iter().flatten());
    }
    if out.is_empty() {
        return Err(Error::InsufficientSmoothness("no node admits the interior stencils".into()));
    }
    Ok(out)
}

pub fn lemma_pi_residual(field: &SolutionField, analysis: &SourceAnalysis, tol_constant: f64) -> Result<LemmaResidual> {
    let samples = lemma_residual_samples(field, analysis)?;
    let max_w = crate::estimate::derived_fields(field)?.iter().fold(0.0f64, |a, s| a.max(s.w.abs()));
    let dt = field.times().windows(2).fold(0.0f64, |a, p| a.max(p[1] - p[0]));
    let h = field.h();
    let tol = tol_constant * (h * h + dt * dt) * (1.0 + max_w).powi(2);
    let mut min = f64::INFINITY;
    let mut witness = None;
    for s in &samples {
        if s.residual < min {
            min = s.residual;
            witness = Some(s.clone());
        }
    }
    Ok(LemmaResidual {
        min_residual: min,
        violation: (-min).max(0.0),
        tol,
        passes: min >= -tol,
        checked: samples.len(),
        witness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub estimate_id: String,
    pub c: f64,
    /// Sup of the first-power right-hand side over the checked nodes.
    pub sup_rhs: f64,
    pub max_ratio: f64,
    pub violation_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionWinner {
    pub region: Region,
    pub estimate_id: String,
    pub sup_rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub field_id: String,
    pub subregion: Subregion,
    /// Sorted by `sup_rhs`, ascending.
    pub rows: Vec<ComparisonRow>,
    pub winner: Option<String>,
    pub region_winners: Vec<RegionWinner>,
    /// Universal sup RHS divided by the boundary-aware one, when both are present.
    pub universal_over_boundary_aware: Option<f64>,
}

pub fn compare_bounds(p: &PreparedField, entries: &[(EstimateKind, f64)], sub: Subregion) -> Result<Comparison> {
    let mut rows = Vec::with_capacity(entries.len());
    let mut per_region: Vec<(Region, String, f64)> = Vec::new();
    for &(est, c) in entries {
        let sq = matches!(est, EstimateKind::Corollary { corollary } if corollary.is_squared());
        let pairs = p.pairs(est, c, sub)?;
        let first_power = |r: f64| if sq { r.sqrt() } else { r };
        let sup_rhs = pairs.iter().fold(0.0f64, |a, &(_, _, r)| a.max(first_power(r)));
        let report = check_prepared(p, est, c, sub)?;
        for region in Region::ALL {
            let s = pairs
                .iter()
                .filter(|(i, _, _)| p.samples[*i].region == region)
                .fold(f64::NEG_INFINITY, |a, &(_, _, r)| a.max(first_power(r)));
            if s.is_finite() {
                per_region.push((region, est.id(), s));
            }
        }
        rows.push(ComparisonRow {
            estimate_id: est.id(),
            c,
            sup_rhs,
            max_ratio: report.max_ratio,
            violation_count: report.violation_count,
        });
    }
    rows.sort_by(|a, b| a.sup_rhs.total_cmp(&b.sup_rhs).then_with(|| a.estimate_id.cmp(&b.estimate_id)));
    let mut region_winners = Vec::new();
    for region in Region::ALL {
        let best = per_region
            .iter()
            .filter(|(r, _, _)| *r == region)
            .min_by(|a, b| a.2.total_cmp(&b.2).then_with(|| a.1.cmp(&b.1)));
        if let Some((r, id, s)) = best {
            region_winners.push(RegionWinner { region: *r, estimate_id: id.clone(), sup_rhs: *s });
        }
    }
    let find = |name: &str| rows.iter().find(|r| r.estimate_id == name).map(|r| r.sup_rhs);
    let universal_over_boundary_aware = match (find("sz_heat"), find("boundary_aware")) {
        (Some(u), Some(b)) if b > 0.0 => Some(u / b),
        _ => None,
    };
    Ok(Comparison {
        field_id: p.field_id.clone(),
        subregion: sub,
        winner: rows.first().map(|r| r.estimate_id.clone()),
        rows,
        region_winners,
        universal_over_boundary_aware,
    })
}
