//! Two-dimensional TM scattering engine built on the discretized volume
//! integral equation, with tooling for profiles split into a known part and
//! an unknown part.
//!
//! * [`grid`]: discretization, contrast maps, fields, plane-wave incidence.
//! * [`greens`]: FFT-applied domain operator `G_D` and receiver matrix `G_S`.
//! * [`forward`]: Krylov solution of the state equation and the data equation.
//! * [`mie`]: analytic series for a homogeneous dielectric cylinder.
//! * [`split`]: known-part field, dressed operator `A`, field increment from
//!   the unknown part, and the closed-form contrast estimator.
//! * [`retrieval`]: adjoint-gradient inversion of the unknown part, error
//!   metrics and losses.
//! * [`dataset`]: digit-raster sample generation and the `.vsf` array format.
//! * [`presets`]: small reproducible split configurations.

pub mod dataset;
pub mod error;
pub mod forward;
pub mod greens;
pub mod grid;
pub mod krylov;
pub mod mie;
pub mod presets;
pub mod retrieval;
pub mod split;
pub mod special;
pub mod vecops;

pub use error::{Error, Result};
pub use forward::{scattered_field, solve_total_field, KrylovMethod, SolveReport, SolverOptions};
pub use greens::{pseudo_inverse_surface, CMatrix, GreensSurfaceMatrix, GreensVolumeOperator};
pub use grid::{
    compose_full_contrast, incident_field, ContrastMap, FieldDomain, FieldVector, Grid2D, IncidentWave,
    PhysicsConfig, ReceiverRing, SplitProfile,
};
pub use num_complex::Complex64;
