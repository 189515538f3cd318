//! Numerical laboratory for logarithmic gradient bounds of positive solutions
//! to `u_t = Δu + S(x, t, u)` on Riemannian cylinders.

// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cutoff;
pub mod error;
pub mod estimate;
pub mod geometry;
pub mod solver;
pub mod source;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::{MetricDescriptor, MetricSpec};
pub use solver::{AnalyticKind, DomainSpec, SolutionField};
pub use source::{SourceAnalysis, SourceSpec};
