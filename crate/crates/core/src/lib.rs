//! Numerical laboratory for local hidden-variable (LHV) models and their dynamics.
//!
//! The crate is organised bottom-up:
//!
//! * [`quantum`] is the exact quantum reference: two-qubit density matrices in Bloch
//!   form, projective measurement statistics and evolution under the Heisenberg
//!   exchange Hamiltonian.
//! * [`sphere`] provides quadrature, uniform sampling and real spherical harmonics
//!   (with surface gradients) on the unit sphere.
//! * [`bell`] implements the Bell base model on `S²`, its closed-form separable
//!   hidden-variable densities and numerical LHV statistics.
//! * [`universal`] implements the softmax base model over a spherical-harmonic
//!   basis and the state-independent transformations `λ ↦ λ d_{U†}`.
//! * [`dynamics`] checks whether a single, state-independent velocity field can
//!   transport the hidden-variable densities along the quantum evolution.
//! * [`nogo`] is exact arithmetic for the dimension bound on microscopic dynamics.
//!
//! Scalar kernels (ramp/step functions, harmonics, softmax) are generic over
//! [`num_traits::Float`]; the linear-algebra layer is concrete `f64`, with the
//! aliases below.

pub mod bell;
pub mod dynamics;
pub mod lstsq;
pub mod nogo;
pub mod quantum;
pub mod scalar;
pub mod sphere;
pub mod universal;

use nalgebra::{Matrix2, Matrix3, Matrix4, Vector3};
use num_complex::Complex;

/// Real 3-vector.
pub type Vec3 = Vector3<f64>;
/// Real 3×3 matrix.
pub type Mat3 = Matrix3<f64>;
/// Double precision complex scalar.
pub type C64 = Complex<f64>;
/// Single-qubit operator.
pub type CMat2 = Matrix2<C64>;
/// Two-qubit operator.
pub type CMat4 = Matrix4<C64>;

pub use bell::{HiddenPoint, TwoQubitLhvDensity};
pub use quantum::{BlochTwoQubit, DensityMatrix, MeasurementEvent, Outcome};
pub use sphere::SphereQuadrature;
