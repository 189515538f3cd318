//! Field construction and check execution.

use gradest_core::estimate::{boundary_traces, derived_fields, region_from_distance, BoundaryTraces};
use gradest_core::solver::{analytic_solution, pde_residual, solve_parabolic, GridSpec, Scheme, SolveOptions};
use gradest_core::source::{analyze, SupGrid};
use gradest_core::verify::{
    calibrate_c, check_prepared, compare_bounds, lemma_pi_residual, prepare_field, BoundReport, Calibration,
    Comparison, EstimateKind, LemmaResidual, PreparedField, Subregion,
};
use gradest_core::{Error, SolutionField, SourceAnalysis, SourceSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{
    CSetting, CheckConfig, CheckPlan, LoadedConfig, SamplerConfig, SolutionConfig, TracesMode, DEFAULT_CAL_TOL,
};
use crate::CliError;

fn build_err(e: Error) -> CliError {
    CliError::Build(e.to_string())
}

/// The configured solution, with spacing and step divided by `2^level`
/// (the explicit step by `4^level`, to stay inside its stability limit).
pub fn build_field(l: &LoadedConfig, level: u32) -> Result<SolutionField, CliError> {
    let cfg = &l.config;
    let metric = l.metric();
    let f = f64::from(1u32 << level);
    let field = match &cfg.solution {
        SolutionConfig::Analytic { analytic, lattice, h, dt, m_bound, scale } => {
            let grid = GridSpec { lattice: lattice.spec(h / f), dt: dt / f };
            let mut field = analytic_solution(*analytic, &cfg.domain, &metric, &grid).map_err(build_err)?;
            if let Some(s) = scale {
                field = field.scaled(*s).map_err(build_err)?;
            }
            if let Some(m) = m_bound {
                field = field.with_declared_bound(*m).map_err(build_err)?;
            }
            field
        }
        SolutionConfig::Solve { scheme, lattice, h, dt, initial, boundary, m_bound, store_every } => {
            let dt = match scheme {
                Scheme::Explicit => dt / (f * f),
                Scheme::CrankNicolson => dt / f,
            };
            let mut opts = SolveOptions::new(*scheme, lattice.spec(h / f), dt);
            opts.store_every = *store_every;
            opts.declared_bound = *m_bound;
            let domain = &cfg.domain;
            let init = |x: &[f64], t: f64| initial.eval(x, t, domain);
            let bdry = |x: &[f64], t: f64| boundary.eval(x, t, domain);
            solve_parabolic(domain, &metric, &l.source(), &init, &bdry, &opts).map_err(build_err)?
        }
    };
    Ok(field)
}

/// `max |u − u_exact|` when both data samplers come from the same closed form.
pub fn exact_data_error(l: &LoadedConfig, field: &SolutionField) -> Option<f64> {
    let SolutionConfig::Solve {
        initial: SamplerConfig::Exact { solution: a },
        boundary: SamplerConfig::Exact { solution: b },
        ..
    } = &l.config.solution
    else {
        return None;
    };
    if a != b || !matches!(l.config.source, gradest_core::source::SourceDescriptor::Zero) {
        return None;
    }
    let lat = field.lattice();
    let mut worst = 0.0f64;
    for (k, &t) in field.times().iter().enumerate() {
        for i in 0..lat.len() {
            worst = worst.max((field.value(i, k) - a.value(lat.coords(i), t)).abs());
        }
    }
    Some(worst)
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckResult {
    Bound {
        report: BoundReport,
    },
    Calibration {
        calibration: Calibration,
        report: BoundReport,
    },
    Comparison {
        c_shared: f64,
        calibrations: Vec<Calibration>,
        comparison: Comparison,
    },
    Lemma {
        residual: LemmaResidual,
    },
    /// The calibration search found no passing `C`.
    Infeasible {
        message: String,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub index: usize,
    pub estimate: String,
    pub subregion: Subregion,
    pub calibration: bool,
    pub passed: bool,
    pub analysis: SourceAnalysis,
    pub traces: BoundaryTraces,
    pub m_inf: f64,
    pub result: CheckResult,
}

impl CheckRecord {
    pub fn c_used(&self) -> Option<f64> {
        match &self.result {
            CheckResult::Bound { report } | CheckResult::Calibration { report, .. } => Some(report.c_used),
            CheckResult::Comparison { c_shared, .. } => Some(*c_shared),
            _ => None,
        }
    }

    pub fn c_star(&self) -> Option<f64> {
        match &self.result {
            CheckResult::Calibration { calibration, .. } => Some(calibration.c_star),
            CheckResult::Comparison { c_shared, calibrations, .. } if !calibrations.is_empty() => Some(*c_shared),
            _ => None,
        }
    }

    pub fn winner(&self) -> Option<String> {
        match &self.result {
            CheckResult::Comparison { comparison, .. } => comparison.winner.clone(),
            _ => None,
        }
    }
}

/// Everything the checks of one field share.
pub struct FieldContext<'a> {
    pub field: &'a SolutionField,
    pub source: SourceSpec,
    pub measured: BoundaryTraces,
    pub m_inf: f64,
    pub analysis: SourceAnalysis,
}

pub fn analysis_for(field: &SolutionField, source: &SourceSpec, m_inf: f64) -> Result<SourceAnalysis, CliError> {
    analyze(source, field.domain(), field.metric(), field.m_bound(), m_inf, SupGrid::default()).map_err(build_err)
}

impl<'a> FieldContext<'a> {
    pub fn new(l: &LoadedConfig, field: &'a SolutionField) -> Result<Self, CliError> {
        let source = l.source();
        let measured = boundary_traces(field).map_err(build_err)?;
        let m_inf = field.value_range().0;
        let analysis = analysis_for(field, &source, m_inf)?;
        Ok(Self { field, source, measured, m_inf, analysis })
    }

    fn traces(&self, mode: TracesMode) -> BoundaryTraces {
        match mode {
            TracesMode::Measured => self.measured,
            TracesMode::Unknown => BoundaryTraces::unknown(),
        }
    }

    /// The prepared samples for one check (analysis recomputed if `m_inf` is overridden).
    pub fn prepare(&self, check: &CheckConfig) -> Result<PreparedField, CliError> {
        let (analysis, m_inf) = match check.m_inf {
            Some(m) => (analysis_for(self.field, &self.source, m)?, m),
            None => (self.analysis, self.m_inf),
        };
        prepare_field(self.field, analysis, self.traces(check.traces), Some(m_inf)).map_err(build_err)
    }
}

fn calibrate_or_note(
    fields: &[PreparedField],
    est: EstimateKind,
    sub: Subregion,
    tol: f64,
) -> Result<Result<Calibration, String>, CliError> {
    match calibrate_c(fields, est, sub, tol) {
        Ok(c) => Ok(Ok(c)),
        Err(e @ Error::Infeasible { .. }) => Ok(Err(e.to_string())),
        Err(e) => Err(build_err(e)),
    }
}

pub fn run_check(
    ctx: &FieldContext<'_>,
    index: usize,
    check: &CheckConfig,
    plan: &CheckPlan,
) -> Result<CheckRecord, CliError> {
    let sub = check.subregion.to_core();
    let tol = check.tol.unwrap_or(DEFAULT_CAL_TOL);
    let record = |analysis, traces, m_inf, passed, result| CheckRecord {
        index,
        estimate: check.label().to_string(),
        subregion: sub,
        calibration: plan.is_calibration(),
        passed,
        analysis,
        traces,
        m_inf,
        result,
    };
    if let CheckPlan::Lemma { tol_constant } = plan {
        let (analysis, m_inf) = match check.m_inf {
            Some(m) => (analysis_for(ctx.field, &ctx.source, m)?, m),
            None => (ctx.analysis, ctx.m_inf),
        };
        let residual = lemma_pi_residual(ctx.field, &analysis, *tol_constant).map_err(build_err)?;
        let passed = residual.passes;
        return Ok(record(analysis, ctx.traces(check.traces), m_inf, passed, CheckResult::Lemma { residual }));
    }
    let prep = ctx.prepare(check)?;
    let (analysis, traces, m_inf) = (prep.analysis, prep.traces, prep.m_inf);
    let result = match plan {
        CheckPlan::Bound { est, c: CSetting::Value(c) } => {
            CheckResult::Bound { report: check_prepared(&prep, *est, *c, sub).map_err(build_err)? }
        }
        CheckPlan::Bound { est, .. } => match calibrate_or_note(std::slice::from_ref(&prep), *est, sub, tol)? {
            Ok(calibration) => {
                let report = check_prepared(&prep, *est, calibration.c_star, sub).map_err(build_err)?;
                CheckResult::Calibration { calibration, report }
            }
            Err(message) => CheckResult::Infeasible { message },
        },
        CheckPlan::Compare { ests, c } => {
            let (c_shared, calibrations) = match c {
                CSetting::Value(c) => (*c, Vec::new()),
                CSetting::Keyword(_) => {
                    let mut cals = Vec::with_capacity(ests.len());
                    for est in ests {
                        match calibrate_or_note(std::slice::from_ref(&prep), *est, sub, tol)? {
                            Ok(cal) => cals.push(cal),
                            Err(message) => {
                                return Ok(record(analysis, traces, m_inf, false, CheckResult::Infeasible { message }))
                            }
                        }
                    }
                    (cals.iter().map(|c| c.c_star).fold(0.0, f64::max), cals)
                }
            };
            let entries: Vec<(EstimateKind, f64)> = ests.iter().map(|e| (*e, c_shared)).collect();
            let comparison = compare_bounds(&prep, &entries, sub).map_err(build_err)?;
            CheckResult::Comparison { c_shared, calibrations, comparison }
        }
        CheckPlan::Lemma { .. } => unreachable!("handled above"),
    };
    let passed = match &result {
        CheckResult::Bound { report } | CheckResult::Calibration { report, .. } => report.passed(),
        CheckResult::Comparison { comparison, .. } => comparison.rows.iter().all(|r| r.violation_count == 0),
        CheckResult::Lemma { residual } => residual.passes,
        CheckResult::Infeasible { .. } => false,
    };
    Ok(record(analysis, traces, m_inf, passed, result))
}

/// Which checks a subcommand runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    All,
    /// Fixed-`C` bounds and the Lemma.
    Verify,
    Calibrate,
    Compare,
}

impl Selection {
    pub fn admits(self, plan: &CheckPlan) -> bool {
        match self {
            Self::All => true,
            Self::Verify => !plan.is_calibration() && !matches!(plan, CheckPlan::Compare { .. }),
            Self::Calibrate => plan.is_calibration() && matches!(plan, CheckPlan::Bound { .. }),
            Self::Compare => matches!(plan, CheckPlan::Compare { .. }),
        }
    }
}

/// Runs the selected checks concurrently; results come back in config order.
pub fn run_checks(l: &LoadedConfig, ctx: &FieldContext<'_>, sel: Selection) -> Result<Vec<CheckRecord>, CliError> {
    let picked: Vec<usize> = (0..l.plans.len()).filter(|&i| sel.admits(&l.plans[i])).collect();
    picked.par_iter().map(|&i| run_check(ctx, i, &l.config.checks[i], &l.plans[i])).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct JointCalibration {
    pub estimate: String,
    pub subregion: Subregion,
    pub fields: Vec<String>,
    pub result: CheckResult,
}

/// Joint calibration: the `j`-th calibrating bound check of every config,
/// which must name the same estimate and subregion.
pub fn joint_calibrations(configs: &[(LoadedConfig, SolutionField)]) -> Result<Vec<JointCalibration>, CliError> {
    let indices = |l: &LoadedConfig| -> Vec<usize> {
        (0..l.plans.len()).filter(|&i| Selection::Calibrate.admits(&l.plans[i])).collect()
    };
    let first = indices(&configs[0].0);
    for (l, _) in &configs[1..] {
        if indices(l).len() != first.len() {
            return Err(CliError::Parse("joint calibration needs the same calibrating checks in every config".into()));
        }
    }
    let contexts = configs.iter().map(|(l, f)| FieldContext::new(l, f)).collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::with_capacity(first.len());
    for (j, &f0) in first.iter().enumerate() {
        let (l0, _) = &configs[0];
        let c0 = &l0.config.checks[f0];
        let CheckPlan::Bound { est, .. } = l0.plans[f0] else { unreachable!("selection admits bounds only") };
        let mut prepared = Vec::with_capacity(configs.len());
        for ((l, _), ctx) in configs.iter().zip(&contexts) {
            let i = indices(l)[j];
            let c = &l.config.checks[i];
            if c.estimate != c0.estimate || c.subregion != c0.subregion {
                return Err(CliError::Parse(format!(
                    "joint calibration: check {j} names `{}` on {:?} in one config and `{}` on {:?} in another",
                    c0.estimate, c0.subregion, c.estimate, c.subregion
                )));
            }
            let mut p = ctx.prepare(c)?;
            p.field_id = format!("{}#{}", p.field_id, &l.hash[..12]);
            prepared.push(p);
        }
        let sub = c0.subregion.to_core();
        let tol = c0.tol.unwrap_or(DEFAULT_CAL_TOL);
        let result = match calibrate_or_note(&prepared, est, sub, tol)? {
            Ok(calibration) => {
                let witness = prepared
                    .iter()
                    .find(|p| Some(&p.field_id) == calibration.witness_field.as_ref())
                    .unwrap_or(&prepared[0]);
                let report = check_prepared(witness, est, calibration.c_star, sub).map_err(build_err)?;
                CheckResult::Calibration { calibration, report }
            }
            Err(message) => CheckResult::Infeasible { message },
        };
        out.push(JointCalibration {
            estimate: c0.estimate.clone(),
            subregion: sub,
            fields: prepared.iter().map(|p| p.field_id.clone()).collect(),
            result,
        });
    }
    Ok(out)
}

/// One row of `nodes.csv`.
pub fn node_rows(field: &SolutionField) -> Result<Vec<String>, CliError> {
    let lat = field.lattice();
    let domain = field.domain();
    let samples = derived_fields(field).map_err(build_err)?;
    samples
        .iter()
        .map(|s| {
            let t = field.times()[s.level];
            let region = region_from_distance(lat.distance(s.node), t, domain).map_err(build_err)?;
            let coords: Vec<String> = lat.coords(s.node).iter().map(f64::to_string).collect();
            Ok(format!(
                "{t},{},{},{},{},{},{region:?}",
                coords.join(","),
                field.value(s.node, s.level),
                s.v,
                s.grad_v,
                s.w
            ))
        })
        .collect()
}

pub fn residual_of(l: &LoadedConfig, field: &SolutionField) -> Option<f64> {
    pde_residual(field, &l.source()).ok()
}
