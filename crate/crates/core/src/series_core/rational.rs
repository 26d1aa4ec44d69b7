//! Exact coefficient fields: ℚ and the Gaussian rationals ℚ(i).

use std::fmt;

use num::bigint::BigInt;
use num::complex::Complex;
use num::rational::BigRational;
use num::traits::{One, Signed, Zero};

use crate::{Error, Result};

/// Arbitrary-precision rational number, always stored reduced with a
/// positive denominator.
pub type Q = BigRational;

/// Gaussian rational a + bi with exact rational parts.
pub type GaussQ = Complex<BigRational>;

/// Rational p/q from machine integers.
pub fn q(p: i64, den: i64) -> Q {
    BigRational::new(BigInt::from(p), BigInt::from(den))
}

/// Gaussian rational from machine-integer real and imaginary parts.
pub fn gq(re_p: i64, re_q: i64, im_p: i64, im_q: i64) -> GaussQ {
    Complex::new(q(re_p, re_q), q(im_p, im_q))
}

/// Parses "p/q" (or a bare integer "p") into a rational.
pub fn parse_q(text: &str) -> Result<Q> {
    let parse_int = |t: &str| -> Result<BigInt> {
        t.trim()
            .parse::<BigInt>()
            .map_err(|_| Error::Internal(format!("not an integer: {t:?}")))
    };
    match text.split_once('/') {
        Some((p, den)) => {
            let den = parse_int(den)?;
            if den.is_zero() {
                return Err(Error::Internal(format!("zero denominator in {text:?}")));
            }
            Ok(BigRational::new(parse_int(p)?, den))
        }
        None => Ok(BigRational::from(parse_int(text)?)),
    }
}

/// Formats a rational as "p/q" with the denominator always written out.
pub fn fmt_q(x: &Q) -> String {
    format!("{}/{}", x.numer(), x.denom())
}

/// Formats a Gaussian rational compactly: "p/q" if real, else
/// "p/q + r/s i" with a sign-aware middle.
pub fn fmt_gauss(z: &GaussQ) -> String {
    if z.im.is_zero() {
        fmt_q(&z.re)
    } else if z.im.is_negative() {
        format!("{} - {} i", fmt_q(&z.re), fmt_q(&(-z.im.clone())))
    } else {
        format!("{} + {} i", fmt_q(&z.re), fmt_q(&z.im))
    }
}

/// Coefficient field for jets: exact, with complex conjugation and
/// embedded rationals.
pub trait Coeff: Clone + PartialEq + fmt::Debug {
    fn zero() -> Self;
    fn one() -> Self;
    fn is_zero(&self) -> bool;
    fn add(&self, rhs: &Self) -> Self;
    fn sub(&self, rhs: &Self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    fn neg(&self) -> Self;
    fn conj(&self) -> Self;
    fn from_q(x: &Q) -> Self;
    /// Multiplicative inverse, None for zero.
    fn field_inv(&self) -> Option<Self>;
    /// True when fixed by conjugation.
    fn is_real(&self) -> bool;
    /// Short human-readable form for error messages.
    fn describe(&self) -> String;
    /// Exact p-th power when the field admits one; anchors rational
    /// powers of jets at their constant term.
    fn rational_pow(&self, p: &Q) -> Result<Self>;

    fn from_i64(n: i64) -> Self {
        Self::from_q(&q(n, 1))
    }
}

impl Coeff for GaussQ {
    fn zero() -> Self {
        Complex::new(Q::zero(), Q::zero())
    }
    fn one() -> Self {
        Complex::new(Q::one(), Q::zero())
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn add(&self, rhs: &Self) -> Self {
        self + rhs
    }
    fn sub(&self, rhs: &Self) -> Self {
        self - rhs
    }
    fn mul(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn neg(&self) -> Self {
        -self
    }
    fn conj(&self) -> Self {
        Complex::new(self.re.clone(), -self.im.clone())
    }
    fn from_q(x: &Q) -> Self {
        Complex::new(x.clone(), Q::zero())
    }
    fn field_inv(&self) -> Option<Self> {
        if Zero::is_zero(self) {
            None
        } else {
            Some(Complex::new(Q::one(), Q::zero()) / self.clone())
        }
    }
    fn is_real(&self) -> bool {
        self.im.is_zero()
    }
    fn describe(&self) -> String {
        fmt_gauss(self)
    }
    fn rational_pow(&self, p: &Q) -> Result<Self> {
        if !self.im.is_zero() {
            return Err(Error::NoRationalPower(self.describe(), fmt_q(p)));
        }
        Ok(Complex::new(rational_power(&self.re, p)?, Q::zero()))
    }
}

/// The rational value of a real Gaussian rational, None otherwise.
pub fn as_rational(z: &GaussQ) -> Option<Q> {
    if z.im.is_zero() {
        Some(z.re.clone())
    } else {
        None
    }
}

/// True for a real and strictly positive Gaussian rational.
pub fn is_positive_real(z: &GaussQ) -> bool {
    z.im.is_zero() && z.re.is_positive()
}

/// Exact p-th power of a positive rational, requiring the result to be
/// rational: for p = r/q both numerator and denominator must be perfect
/// q-th powers.
pub fn rational_power(base: &Q, p: &Q) -> Result<Q> {
    if !base.is_positive() {
        return Err(Error::NoRationalPower(fmt_q(base), fmt_q(p)));
    }
    let root = |n: &BigInt, deg: u32| -> Result<BigInt> {
        let r = n.nth_root(deg);
        if num::pow::pow(r.clone(), deg as usize) == *n {
            Ok(r)
        } else {
            Err(Error::NoRationalPower(fmt_q(base), fmt_q(p)))
        }
    };
    let deg: u32 = p
        .denom()
        .try_into()
        .map_err(|_| Error::NoRationalPower(fmt_q(base), fmt_q(p)))?;
    let rooted = Q::new(root(base.numer(), deg)?, root(base.denom(), deg)?);
    let e = p.numer();
    let abs: usize = e
        .abs()
        .try_into()
        .map_err(|_| Error::NoRationalPower(fmt_q(base), fmt_q(p)))?;
    let powed = num::pow::pow(rooted, abs);
    if e.is_negative() {
        Ok(Q::one() / powed)
    } else {
        Ok(powed)
    }
}
