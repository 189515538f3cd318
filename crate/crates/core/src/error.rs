use thiserror::Error;

/// Errors produced anywhere in the estimate pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("point {point:?} lies outside the metric domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("geodesic distance is not available for conformal factor `{0}`")]
    UnsupportedDistance(String),

    #[error("stencil at {point:?} leaves the metric domain")]
    StencilOutsideDomain { point: Vec<f64> },

    #[error("non-finite sample {value} at {point:?}")]
    NonFinite { point: Vec<f64>, value: f64 },

    #[error("transition profile is not strictly increasing on the bridge for a = {a}")]
    NonMonotoneBridge { a: f64 },

    #[error("source evaluated at non-positive u = {0}")]
    NonPositiveU(f64),

    #[error("closed form unavailable: {0}")]
    ClosedFormUnavailable(String),

    #[error("CFL violation: dt = {dt} exceeds stability limit {limit}")]
    Cfl { dt: f64, limit: f64 },

    #[error("positivity lost at t = {t}: u = {value} below floor {floor}")]
    PositivityLoss { t: f64, value: f64, floor: f64 },

    #[error("nonlinear solve diverged at t = {t}: {reason}")]
    Divergence { t: f64, reason: String },

    #[error("field value {value} exceeds declared bound M = {bound}")]
    AboveBound { value: f64, bound: f64 },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("point ({x:?}, t = {t}) outside the cylinder")]
    OutsideCylinder { x: Vec<f64>, t: f64 },

    #[error("regime violation: {0}")]
    Regime(String),

    #[error("estimate does not fit the field: {0}")]
    Mismatch(String),

    #[error("calibration infeasible: predicate still fails at C = {c_max}")]
    Infeasible { c_max: f64 },

    #[error("calibration needs at least one field")]
    EmptyFieldList,

    #[error("insufficient smoothness: {0}")]
    InsufficientSmoothness(String),

    #[error("field file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
