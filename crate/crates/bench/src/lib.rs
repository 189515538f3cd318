//! Shared fixtures for the kernel benchmarks in `benches/`.

use gradest_core::estimate::boundary_traces;
use gradest_core::solver::{analytic_solution, GridSpec, LatticeSpec};
use gradest_core::verify::{prepare_field, PreparedField};
use gradest_core::{AnalyticKind, DomainSpec, MetricSpec, SolutionField, SourceAnalysis};

pub fn unit_domain(t0: f64) -> DomainSpec {
    DomainSpec::new(vec![0.0, 0.0], 1.0, t0, 1.0, 0.5, 0.5).expect("valid domain")
}

/// Heat kernel on `B(0, 1) × [1, 2]`.
pub fn gauss_field(h: f64) -> SolutionField {
    let grid = GridSpec { lattice: LatticeSpec::Planar { h }, dt: h };
    analytic_solution(
        AnalyticKind::GaussKernel { dim: 2 },
        &unit_domain(2.0),
        &MetricSpec::euclidean(2).unwrap(),
        &grid,
    )
    .expect("gauss field")
}

/// `10 + 0.01 e^{x₁+t}` on `B(0, 1) × [0, 1]` with `M = 19`.
pub fn exp_field(h: f64) -> SolutionField {
    let grid = GridSpec { lattice: LatticeSpec::Planar { h }, dt: h };
    analytic_solution(
        AnalyticKind::ExpExample { epsilon: 0.01 },
        &unit_domain(1.0),
        &MetricSpec::euclidean(2).unwrap(),
        &grid,
    )
    .and_then(|f| f.with_declared_bound(19.0))
    .expect("exp field")
}

pub fn prepared(field: &SolutionField) -> PreparedField {
    let traces = boundary_traces(field).expect("traces");
    prepare_field(field, SourceAnalysis::heat(0.0), traces, None).expect("prepared field")
}
