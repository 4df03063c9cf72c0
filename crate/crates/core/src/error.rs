use crate::materials::MaterialError;
use crate::quantities::QuantityError;
use crate::specfun::SpecError;
use thiserror::Error;

/// Errors raised by the energy routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CpError {
    #[error(transparent)]
    Quantity(#[from] QuantityError),
    #[error(transparent)]
    Special(#[from] SpecError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{what} did not converge: {detail}")]
    NotConverged { what: &'static str, detail: String },
    #[error(
        "spectral radius {radius:.9} at n = {n}, channel {channel} reaches the guard {guard}; \
         the Neumann series is not usable here, use the resummed energy instead"
    )]
    SpectralGuard { n: usize, channel: String, radius: f64, guard: f64 },
    #[error("I - K is singular at n = {n}, channel {channel}")]
    Singular { n: usize, channel: String },
    #[error("non-finite value at n = {n}, channel {channel}")]
    NonFinite { n: usize, channel: String },
}

impl CpError {
    /// True for failures of a truncation or series to converge.
    pub fn is_convergence_failure(&self) -> bool {
        matches!(
            self,
            CpError::NotConverged { .. }
                | CpError::Singular { .. }
                | CpError::NonFinite { .. }
                | CpError::Quantity(QuantityError::NonFinite { .. })
                | CpError::Special(SpecError::NoConvergence(_))
        )
    }
}

pub type Result<T> = std::result::Result<T, CpError>;
