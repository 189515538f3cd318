//! Positive solutions of `u_t = Δu + S(x,t,u)` on a cylinder: closed forms
//! sampled on a lattice, or finite-difference integration.

mod analytic;
mod domain;
mod field;
mod integrate;
mod io;
mod lattice;

pub use analytic::AnalyticKind;
pub use domain::DomainSpec;
pub(crate) use field::time_derivative as time_derivative_of;
pub use field::{analytic_solution, pde_residual, GridSpec, Provenance, Scheme, SolutionField};
pub use integrate::{explicit_step_limit, solve_parabolic, Sampler, SolveOptions, POSITIVITY_FLOOR};
pub use io::{read_field, write_field};
pub use lattice::{Lattice, LatticeSpec, NodeKind};
