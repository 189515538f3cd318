//! Experiment configuration: TOML in, validated and normalized config out.

use gradest_core::cutoff::CutoffParams;
use gradest_core::estimate::{ma_zeng_regime, CorollaryKind, Region};
use gradest_core::solver::{LatticeSpec, Scheme};
use gradest_core::source::SourceDescriptor;
use gradest_core::verify::{EstimateKind, Subregion};
use gradest_core::{AnalyticKind, DomainSpec, Error, MetricDescriptor, MetricSpec, SourceSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub metric: MetricDescriptor,
    pub domain: DomainSpec,
    #[serde(default = "zero_source")]
    pub source: SourceDescriptor,
    pub solution: SolutionConfig,
    #[serde(default)]
    pub cutoff: CutoffConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
    #[serde(default)]
    pub checks: Vec<CheckConfig>,
}

fn zero_source() -> SourceDescriptor {
    SourceDescriptor::Zero
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeKind {
    #[default]
    Planar,
    Radial,
}

impl LatticeKind {
    pub fn spec(self, h: f64) -> LatticeSpec {
        match self {
            Self::Planar => LatticeSpec::Planar { h },
            Self::Radial => LatticeSpec::Radial { h },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolutionConfig {
    /// A closed-form solution sampled on a lattice.
    Analytic {
        analytic: AnalyticKind,
        #[serde(default)]
        lattice: LatticeKind,
        h: f64,
        dt: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m_bound: Option<f64>,
        /// Multiplies the solution (and `M`).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
    },
    /// A finite-difference solve with Dirichlet data.
    Solve {
        scheme: Scheme,
        #[serde(default)]
        lattice: LatticeKind,
        h: f64,
        dt: f64,
        initial: SamplerConfig,
        boundary: SamplerConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m_bound: Option<f64>,
        #[serde(default = "one")]
        store_every: usize,
    },
}

fn one() -> usize {
    1
}

impl SolutionConfig {
    pub fn h(&self) -> f64 {
        match self {
            Self::Analytic { h, .. } | Self::Solve { h, .. } => *h,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            Self::Analytic { dt, .. } | Self::Solve { dt, .. } => *dt,
        }
    }
}

/// Initial and boundary data, addressed by id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerConfig {
    Constant {
        value: f64,
    },
    /// `base + amp (1 − |x − x₀|²/R²)₊` with the flat distance.
    Bump {
        base: f64,
        amp: f64,
    },
    /// `1/(a − (t − t₀ + T))`, the spatially constant solution of `u_t = u²`.
    Reciprocal {
        a: f64,
    },
    /// Traces of a closed-form solution.
    Exact {
        solution: AnalyticKind,
    },
}

impl SamplerConfig {
    pub fn eval(&self, x: &[f64], t: f64, domain: &DomainSpec) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::Bump { base, amp } => {
                let d2: f64 = x.iter().zip(&domain.x0).map(|(a, b)| (a - b) * (a - b)).sum();
                base + amp * (1.0 - d2 / (domain.radius * domain.radius)).max(0.0)
            }
            Self::Reciprocal { a } => 1.0 / (a - (t - domain.t_start())),
            Self::Exact { solution } => solution.value(x, t),
        }
    }

    fn validate(&self, domain: &DomainSpec) -> Result<(), (&'static str, String)> {
        match *self {
            Self::Constant { value } if !(value > 0.0 && value.is_finite()) => {
                Err(("value", format!("must be positive, got {value}")))
            }
            Self::Bump { base, amp } if !(base > 0.0 && amp >= 0.0 && (base + amp).is_finite()) => {
                Err(("base", format!("need base > 0 and amp ≥ 0, got {base}, {amp}")))
            }
            Self::Reciprocal { a } if !(a > domain.duration && a.is_finite()) => {
                Err(("a", format!("must exceed the duration {} to stay finite, got {a}", domain.duration)))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffConfig {
    #[serde(default = "default_a")]
    pub a: Vec<f64>,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_a() -> Vec<f64> {
    vec![0.5]
}

fn default_points() -> usize {
    10_000
}

impl Default for CutoffConfig {
    fn default() -> Self {
        Self { a: default_a(), points: default_points() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    /// Write the solution as a columnar field file.
    #[serde(default)]
    pub field: bool,
    /// Write per-node derived quantities as CSV.
    #[serde(default)]
    pub node_csv: bool,
    /// Write the spatial cut-off profile as CSV.
    #[serde(default)]
    pub cutoff_profile: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Keyword {
    Calibrate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CSetting {
    Value(f64),
    Keyword(Keyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TracesMode {
    #[default]
    Measured,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubregionName {
    #[default]
    All,
    HalfCylinder,
    B1,
    B2,
    B3,
    Interior,
}

impl SubregionName {
    pub fn to_core(self) -> Subregion {
        match self {
            Self::All => Subregion::All,
            Self::HalfCylinder => Subregion::HalfCylinder,
            Self::B1 => Subregion::Region { region: Region::B1 },
            Self::B2 => Subregion::Region { region: Region::B2 },
            Self::B3 => Subregion::Region { region: Region::B3 },
            Self::Interior => Subregion::Region { region: Region::Interior },
        }
    }
}

/// One entry of `[[checks]]`.
///
/// `estimate` is a bound id (`theorem`, `regional_w`, `sz_heat`, `ma_zeng`,
/// `semilinear_p`, `u_squared`, `interior_general`, `boundary_aware`), or
/// `compare` (with `estimates`), or `lemma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub estimate: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<CSetting>,
    #[serde(default)]
    pub subregion: SubregionName,
    #[serde(default)]
    pub traces: TracesMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_inf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimates: Option<Vec<String>>,
    /// Relative tolerance of the calibration bisection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// `c` in the Lemma tolerance `c (h² + dt²)(1 + max w)²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_constant: Option<f64>,
}

pub const DEFAULT_CAL_TOL: f64 = 1e-3;

/// What a check does once its parameters are resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckPlan {
    Bound { est: EstimateKind, c: CSetting },
    Compare { ests: Vec<EstimateKind>, c: CSetting },
    Lemma { tol_constant: f64 },
}

impl CheckPlan {
    pub fn is_calibration(&self) -> bool {
        match self {
            Self::Bound { c, .. } | Self::Compare { c, .. } => matches!(c, CSetting::Keyword(Keyword::Calibrate)),
            Self::Lemma { .. } => false,
        }
    }
}

impl CheckConfig {
    fn estimate_kind(&self, name: &str, source: &SourceDescriptor) -> Result<EstimateKind, (&'static str, String)> {
        let cor = |corollary| Ok(EstimateKind::Corollary { corollary });
        match name {
            "theorem" => Ok(EstimateKind::Theorem),
            "regional_w" => Ok(EstimateKind::RegionalW),
            "sz_heat" => cor(CorollaryKind::SzHeat),
            "u_squared" => cor(CorollaryKind::USquared),
            "interior_general" => cor(CorollaryKind::InteriorGeneral),
            "boundary_aware" => cor(CorollaryKind::BoundaryAware),
            "ma_zeng" => {
                let (sl, sa) = match source {
                    SourceDescriptor::Power { lambda, alpha } => (Some(*lambda), Some(*alpha)),
                    _ => (None, None),
                };
                let lambda = self.lambda.or(sl).ok_or(("lambda", "needed for ma_zeng".to_string()))?;
                let alpha = self.alpha.or(sa).ok_or(("alpha", "needed for ma_zeng".to_string()))?;
                ma_zeng_regime(lambda, alpha).map_err(|e| ("alpha", e.to_string()))?;
                cor(CorollaryKind::MaZeng { lambda, alpha })
            }
            "semilinear_p" => {
                let sp = match source {
                    SourceDescriptor::Semilinear { p } => Some(*p),
                    _ => None,
                };
                let p = self.p.or(sp).ok_or(("p", "needed for semilinear_p".to_string()))?;
                if !p.is_finite() {
                    return Err(("p", "must be finite".into()));
                }
                cor(CorollaryKind::SemilinearP { p })
            }
            other => Err(("estimate", format!("unknown estimate id `{other}`"))),
        }
    }

    fn c_setting(&self) -> Result<CSetting, (&'static str, String)> {
        match self.c {
            None => Err(("c", "missing; give a positive number or \"calibrate\"".into())),
            Some(CSetting::Value(v)) if !(v > 0.0 && v.is_finite()) => {
                Err(("c", format!("must be positive and finite, got {v}")))
            }
            Some(c) => Ok(c),
        }
    }

    pub fn plan(&self, source: &SourceDescriptor) -> Result<CheckPlan, (&'static str, String)> {
        if let Some(t) = self.tol {
            if !(t > 0.0 && t < 1.0) {
                return Err(("tol", format!("must lie in (0, 1), got {t}")));
            }
        }
        if let Some(m) = self.m_inf {
            if !(m > 0.0 && m.is_finite()) {
                return Err(("m_inf", format!("must be positive, got {m}")));
            }
        }
        match self.estimate.as_str() {
            "lemma" => {
                let tol_constant = self.tol_constant.unwrap_or(gradest_core::verify::LEMMA_TOL_CONSTANT);
                if !(tol_constant >= 0.0 && tol_constant.is_finite()) {
                    return Err(("tol_constant", format!("must be non-negative, got {tol_constant}")));
                }
                Ok(CheckPlan::Lemma { tol_constant })
            }
            "compare" => {
                let names = self.estimates.as_ref().ok_or(("estimates", "compare needs a list".to_string()))?;
                if names.len() < 2 {
                    return Err(("estimates", "compare needs at least two estimates".into()));
                }
                let ests = names.iter().map(|n| self.estimate_kind(n, source)).collect::<Result<_, _>>()?;
                Ok(CheckPlan::Compare { ests, c: self.c_setting()? })
            }
            name => Ok(CheckPlan::Bound { est: self.estimate_kind(name, source)?, c: self.c_setting()? }),
        }
    }

    /// Short label used in artifact names.
    pub fn label(&self) -> &str {
        &self.estimate
    }
}

/// A parsed config together with its source text (for diagnostics).
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub plans: Vec<CheckPlan>,
    pub normalized: String,
    pub hash: String,
}

impl LoadedConfig {
    pub fn metric(&self) -> MetricSpec {
        MetricSpec::from_descriptor(&self.config.metric).expect("validated at parse time")
    }

    pub fn source(&self) -> SourceSpec {
        SourceSpec::from_descriptor(&self.config.source).expect("validated at parse time")
    }
}

/// Where a validation error points: `section`, optional array index, key.
struct Site {
    section: &'static str,
    index: Option<usize>,
    key: String,
}

fn domain_key(name: &str) -> bool {
    matches!(name, "x0" | "radius" | "t0" | "duration" | "rho" | "delta")
}

/// 1-based line of `key` inside the given section, falling back to the
/// section header.
fn locate(src: &str, site: &Site) -> Option<usize> {
    let mut current: Option<(String, usize)> = None;
    let mut counts: std::collections::HashMap<String, usize> = Default::default();
    let mut header = None;
    let leaf = site.key.rsplit('.').next().unwrap_or(&site.key);
    let head = site.key.split('.').next().unwrap_or(&site.key);
    let mut head_line = None;
    for (n, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            let name = line.trim_start_matches('[').split(']').next().unwrap_or("").trim().to_string();
            let c = counts.entry(name.clone()).or_insert(0);
            if name == site.section && site.index.is_none_or(|i| i == *c) && header.is_none() {
                header = Some(n + 1);
            }
            current = Some((name, *c));
            *c += 1;
            continue;
        }
        let Some((name, idx)) = &current else { continue };
        if name != site.section || site.index.is_some_and(|i| i != *idx) {
            continue;
        }
        let key = line.split('=').next().unwrap_or("").trim();
        if key == leaf || line.contains(&format!("{leaf} =")) && line.contains('{') {
            return Some(n + 1);
        }
        if key == head && head_line.is_none() {
            head_line = Some(n + 1);
        }
    }
    head_line.or(header)
}

fn diag(path: &str, src: &str, site: Site, reason: String) -> CliError {
    let field = match site.index {
        Some(i) => format!("{}[{i}].{}", site.section, site.key),
        None => format!("{}.{}", site.section, site.key),
    };
    let line = locate(src, &site).map_or(String::new(), |l| format!(":{l}"));
    CliError::Parse(format!("{path}{line}: field `{field}`: {reason}"))
}

fn core_reason(e: &Error) -> (Option<&'static str>, String) {
    match e {
        Error::InvalidParameter { name, reason } => (Some(name), reason.clone()),
        other => (None, other.to_string()),
    }
}

pub fn parse_config(path: &str, src: &str) -> Result<LoadedConfig, CliError> {
    let config: ExperimentConfig = toml::from_str(src).map_err(|e| {
        let line = e.span().map(|s| src[..s.start.min(src.len())].lines().count().max(1));
        let at = line.map_or(String::new(), |l| format!(":{l}"));
        CliError::Parse(format!("{path}{at}: {}", e.message()))
    })?;
    let site = |section, index, key: &str| Site { section, index, key: key.to_string() };

    let metric = MetricSpec::from_descriptor(&config.metric).map_err(|e| {
        let (name, reason) = core_reason(&e);
        diag(path, src, site("metric", None, name.unwrap_or("kind")), reason)
    })?;
    config.domain.validate().map_err(|e| {
        let (name, reason) = core_reason(&e);
        diag(path, src, site("domain", None, name.unwrap_or("radius")), reason)
    })?;
    if config.domain.x0.len() != metric.dim() {
        return Err(diag(
            path,
            src,
            site("domain", None, "x0"),
            format!("has {} coordinates, the metric has dimension {}", config.domain.x0.len(), metric.dim()),
        ));
    }
    if !metric.contains(&config.domain.x0) {
        return Err(diag(path, src, site("domain", None, "x0"), "center lies outside the metric domain".into()));
    }
    SourceSpec::from_descriptor(&config.source).map_err(|e| {
        let (name, reason) = core_reason(&e);
        diag(path, src, site("source", None, name.unwrap_or("kind")), reason)
    })?;

    let sol = &config.solution;
    for (key, v) in [("h", sol.h()), ("dt", sol.dt())] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(diag(path, src, site("solution", None, key), format!("must be positive, got {v}")));
        }
    }
    match sol {
        SolutionConfig::Analytic { analytic, m_bound, scale, .. } => {
            analytic.validate(&config.domain, &metric).map_err(|e| {
                let (name, reason) = core_reason(&e);
                match name {
                    Some(n) if domain_key(n) => diag(path, src, site("domain", None, n), reason),
                    Some(n) => diag(path, src, site("solution", None, &format!("analytic.{n}")), reason),
                    None => diag(path, src, site("solution", None, "analytic"), reason),
                }
            })?;
            if let Some(m) = m_bound.filter(|m| !(*m > 0.0 && m.is_finite())) {
                return Err(diag(path, src, site("solution", None, "m_bound"), format!("must be positive, got {m}")));
            }
            if let Some(s) = scale.filter(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(diag(path, src, site("solution", None, "scale"), format!("must be positive, got {s}")));
            }
        }
        SolutionConfig::Solve { initial, boundary, m_bound, store_every, .. } => {
            for (key, s) in [("initial", initial), ("boundary", boundary)] {
                s.validate(&config.domain)
                    .map_err(|(n, r)| diag(path, src, site("solution", None, &format!("{key}.{n}")), r))?;
                if let SamplerConfig::Exact { solution } = s {
                    solution
                        .validate(&config.domain, &metric)
                        .map_err(|e| diag(path, src, site("solution", None, key), core_reason(&e).1))?;
                }
            }
            if let Some(m) = m_bound.filter(|m| !(*m > 0.0 && m.is_finite())) {
                return Err(diag(path, src, site("solution", None, "m_bound"), format!("must be positive, got {m}")));
            }
            if *store_every == 0 {
                return Err(diag(path, src, site("solution", None, "store_every"), "must be at least 1".into()));
            }
        }
    }

    if config.cutoff.points < 2 {
        return Err(diag(path, src, site("cutoff", None, "points"), "need at least two samples".into()));
    }
    for &a in &config.cutoff.a {
        let p: CutoffParams = config.domain.cutoff_params(a);
        p.validate().map_err(|e| {
            let (name, reason) = core_reason(&e);
            diag(path, src, site("cutoff", None, name.unwrap_or("a")), reason)
        })?;
    }

    let plans = config
        .checks
        .iter()
        .enumerate()
        .map(|(i, c)| c.plan(&config.source).map_err(|(k, r)| diag(path, src, site("checks", Some(i), k), r)))
        .collect::<Result<Vec<_>, _>>()?;

    let normalized = normalize(&config)?;
    let hash = Sha256::digest(normalized.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    Ok(LoadedConfig { config, plans, normalized, hash })
}

/// Canonical text: every default spelled out, fixed key order.
pub fn normalize(config: &ExperimentConfig) -> Result<String, CliError> {
    toml::to_string(config).map_err(|e| CliError::Parse(format!("cannot normalize config: {e}")))
}
