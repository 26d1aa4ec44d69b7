//! Exact computer algebra for the asymptotic geometry of strictly
//! pseudoconvex domains: approximate Monge-Ampère solutions, the
//! Graham-Lee metric and its Laplacian, the formal scattering recurrence
//! with its residue operators and Q-curvature, and renormalized volume
//! coefficients.
//!
//! All arithmetic is exact over ℚ(i) (or over rational functions of the
//! spectral parameter s) except for one quarantined floating-point
//! quadrature in [`renorm_volume`].

pub mod cr_frames;
pub mod graham_lee;
pub mod model_zoo;
pub mod monge_ampere;
pub mod renorm_volume;
pub mod scattering;
pub mod series_core;

use thiserror::Error;

/// Failure modes shared across the library.
///
/// `Parse`-like failures live in callers; everything here is either a
/// violated precondition on the input data or an internal consistency
/// check that did not close.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("variable signatures differ: {0} vs {1}")]
    SignatureMismatch(String, String),
    #[error("truncation orders differ: {0} vs {1}")]
    TruncationMismatch(String, String),
    #[error("constant term {0} is not invertible")]
    NotInvertible(String),
    #[error("constant term {0} does not have an exact rational power {1}")]
    NoRationalPower(String, String),
    #[error("division is not exact: {0}")]
    InexactDivision(String),
    #[error("pole of order {order} at s = {at}, expected at most a simple pole")]
    HigherOrderPole { at: String, order: usize },
    #[error("defining function is not admissible: {0}")]
    BadDefiningFunction(String),
    #[error("truncation order {have} is too low, need at least {need}")]
    TruncationTooLow { have: usize, need: usize },
    #[error("linear solve has no unit pivot in column {0}")]
    SingularSystem(usize),
    #[error("no closed-form reference values for model {0}")]
    NoReferenceValues(String),
    #[error("internal consistency check failed: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
