//! Gaussian entropic optimal transport in closed form.
//!
//! One eigendecomposition of an aligned cross-covariance `GᵀM` yields the
//! entire regularization path: every per-`ε` quantity is a scalar map of
//! its spectrum.

// `!(x > 0.0)` style guards reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod coupling;
pub mod eot;
pub mod error;
pub mod gaussian;
pub mod io;
pub mod oracle;
pub mod processes;
pub mod quadrature;
pub mod random;
pub mod rates;
pub mod spectral;

pub use coupling::Coupling;
pub use eot::{build_path, solve_at, EotReport, SpectralPath};
pub use error::{EotError, Result};
pub use gaussian::{
    align, canonical_pair, AlignedPair, Covariance, GreenFactor, GreenMethod, KantorovichVariant, SchurData,
};
pub use spectral::{Regularization, ScalarFn, SymmetricSpectrum, DEFAULT_RANK_TOL};
