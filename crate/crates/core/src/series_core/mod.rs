//! Truncated multivariate power series over exact coefficient fields.
//!
//! The coefficient fields in use are the Gaussian rationals ℚ(i) and the
//! field ℚ(i)(s) of rational functions of the spectral parameter s. A
//! [`Jet`] is a truncated series in a fixed variable signature; in the
//! collar signature the first variable is the boundary defining function
//! x and the remaining ones are boundary coordinates.

mod jet;
mod linalg;
mod rational;
mod srat;

pub use jet::{Jet, Trunc, VarKind, Vars};
pub use linalg::{jet_det, jet_linsolve, jet_matrix_inverse};
pub use rational::{
    as_rational, fmt_gauss, fmt_q, gq, is_positive_real, parse_q, q, rational_power, Coeff,
    GaussQ, Q,
};
pub use srat::{SPoly, SRat};

use crate::Result;

/// Equality of two jets on the coarsest region both truncations certify.
pub fn jets_equal<C: Coeff>(a: &Jet<C>, b: &Jet<C>) -> bool {
    let t = a.trunc().meet(&b.trunc());
    a.truncate_to(t) == b.truncate_to(t)
}

/// Checked sum of two jets with matching signature and truncation.
pub fn jet_add<C: Coeff>(a: &Jet<C>, b: &Jet<C>) -> Result<Jet<C>> {
    a.checked_binop(b)?;
    Ok(a + b)
}

/// Checked product of two jets with matching signature and truncation.
pub fn jet_mul<C: Coeff>(a: &Jet<C>, b: &Jet<C>) -> Result<Jet<C>> {
    a.checked_binop(b)?;
    Ok(a * b)
}

/// Multiplicative inverse of a jet with invertible constant term.
pub fn jet_inverse<C: Coeff>(a: &Jet<C>) -> Result<Jet<C>> {
    a.inverse()
}

/// Rational power `a^p` of a jet whose constant term is a positive
/// rational with an exact rational p-th power.
pub fn jet_pow_frac<C: Coeff>(a: &Jet<C>, p: &Q) -> Result<Jet<C>> {
    a.pow_q(p)
}

/// Partial derivative of a jet in the i-th variable.
pub fn jet_derive<C: Coeff>(a: &Jet<C>, i: usize) -> Jet<C> {
    a.derive(i)
}

/// Logarithm of a jet with positive rational constant term, split as the
/// constant `a(0)` (whose log stays symbolic) and the series
/// `log(a/a(0))`. Consumers only ever use derivatives of the series part,
/// so the symbolic constant never needs a numeric value.
pub fn jet_log<C: Coeff>(a: &Jet<C>) -> Result<(C, Jet<C>)> {
    a.log_split()
}

/// Residue of a rational function of s at a rational point. Zero at a
/// regular point; an error on a pole of order two or more.
pub fn srat_residue(f: &SRat, s0: &Q) -> Result<GaussQ> {
    f.residue_at(s0)
}
