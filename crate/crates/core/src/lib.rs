//! Casimir–Polder energies of a polarizable particle near a dielectric sphere
//! or an infinite cylinder, computed both from exact T-matrices and from the
//! multiple-scattering expansion of a surface integral formulation.
//!
//! The crate is organised bottom-up: [`quantities`] and [`specfun`] supply
//! units and Bessel functions, [`materials`] the permittivities,
//! [`sphere_exact`] and [`cylinder_exact`] the benchmark energies,
//! [`sso_mse`] the surface scattering operator and its Neumann series, and
//! [`pipeline`] the distance sweeps.

mod engine;
mod error;
pub mod cylinder_exact;
pub mod materials;
pub mod pipeline;
pub mod quantities;
pub mod specfun;
pub mod sso_mse;
pub mod sphere_exact;

pub use engine::SumReport;
pub use error::{CpError, Result};
pub use materials::{Material, MaterialLibrary, Permittivity};
pub use quantities::{Configuration, Gauge, Geometry, Tolerances};
pub use pipeline::{run_sweep, SweepResult, SweepRow};
pub use sphere_exact::ExactEnergy;
pub use sso_mse::{GuardPolicy, MseEnergy};
