//! Mixed finite elements for weakly symmetric elasticity.

pub mod assembly;
pub mod constitutive;
pub mod element;
pub mod quadrature;

use thiserror::Error;

pub use assembly::{inf_norm, BoundarySpec, Discretization, DofMap, MixedSystem};
pub use constitutive::{
    asym2d, asym2d_adjoint, asym3d, asym3d_adjoint, deviator, frobenius_norm, ConstitutiveLaw, HenckyVonMises,
    Hooke, Mat2,
};

#[derive(Debug, Error, PartialEq)]
pub enum FemError {
    #[error("invalid Lamé parameters mu = {mu}, lambda = {lambda} (need mu > 0 and mu + lambda > 0)")]
    InvalidLame { mu: f64, lambda: f64 },
    #[error("invalid Hencky–von Mises parameters alpha = {alpha}, beta = {beta} (need alpha >= 0, beta <= 2)")]
    InvalidHencky { alpha: f64, beta: f64 },
    #[error("argument must be non-negative, got {0}")]
    NegativeArgument(f64),
    #[error("invalid boundary partition: {0}")]
    InvalidBoundary(String),
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
}
