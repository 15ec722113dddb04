//! Continuity-equation tests for hidden-variable dynamics.
//!
//! A velocity field `V = (V₁, V₂)` on `S² × S²` realises the dynamics of a
//! family of densities when `∂_t p + div(pV) = 0` for every member. The field
//! is expanded in a finite tangential basis, the equation is imposed at the
//! initial time on a set of node pairs, and the least-squares residual measures
//! how far the family is from admitting a common field.

mod basis;
mod chain;
mod control;
mod feasibility;
mod rates;

use thiserror::Error;

use crate::bell::BellError;

pub use basis::{
    surface_divergence_fd, BasisTerm, FnField, HarmonicKind, LocalFrame, SphereBasisTerm,
    SphereVelocityBasis, TangentField, VelocityBasis, VelocityCoefficients, VelocityField,
};
pub use chain::{analytic_chain_check, chain_stages, ChainReport, StageReport};
pub use control::{
    control_analytic_residual, control_nodes, control_states, rotating_density_rate,
    single_qubit_control,
};
pub use feasibility::{
    assemble_feasibility, continuity_residual, continuity_rows, fit_velocity_field,
    headline_ensemble, residual_curve, FeasibilityReport, FeasibilitySystem, KinkExclusion,
    NodeCompression, PairGrid,
};
pub use rates::{
    density_surface_gradient, density_time_derivative, fd_surface_gradient, StateDynamics,
    TimeDerivative, DEFAULT_DT,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("evolved state leaves the construction domain at t = {t} (sum {sum})")]
    LeavesDomain { t: f64, sum: f64 },
    #[error("point lies on a kink circle (distance {0:e})")]
    OnKink(f64),
    #[error("no usable nodes after kink exclusion")]
    EmptyGrid,
    #[error("empty state list")]
    NoStates,
    #[error("node sampling gave up after {attempts} attempts with {accepted} accepted")]
    SamplingExhausted { attempts: usize, accepted: usize },
    #[error(transparent)]
    Bell(#[from] BellError),
}
