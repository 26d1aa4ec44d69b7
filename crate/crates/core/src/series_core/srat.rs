//! Rational functions of the spectral parameter s over ℚ(i).
//!
//! An [`SRat`] is kept gcd-reduced with a monic denominator, so pole
//! locations and orders are read off the reduced denominator and two
//! values are equal iff their normal forms are.

use std::fmt;

use crate::series_core::rational::{fmt_gauss, fmt_q, Coeff, GaussQ, Q};
use crate::{Error, Result};

/// Dense polynomial in s with Gaussian rational coefficients. The
/// coefficient vector has no trailing zeros; the zero polynomial is the
/// empty vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SPoly(Vec<GaussQ>);

impl SPoly {
    pub fn zero() -> Self {
        SPoly(Vec::new())
    }

    pub fn constant(c: GaussQ) -> Self {
        let mut p = SPoly(vec![c]);
        p.normalize();
        p
    }

    pub fn one() -> Self {
        Self::constant(Coeff::one())
    }

    /// The monomial s.
    pub fn var() -> Self {
        SPoly(vec![Coeff::zero(), Coeff::one()])
    }

    pub fn from_coeffs(cs: Vec<GaussQ>) -> Self {
        let mut p = SPoly(cs);
        p.normalize();
        p
    }

    fn normalize(&mut self) {
        while self.0.last().map(Coeff::is_zero).unwrap_or(false) {
            self.0.pop();
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    /// Degree, with None for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.0.len().checked_sub(1)
    }

    pub fn leading(&self) -> Option<&GaussQ> {
        self.0.last()
    }

    pub fn coeffs(&self) -> &[GaussQ] {
        &self.0
    }

    pub fn add(&self, rhs: &Self) -> Self {
        let n = self.0.len().max(rhs.0.len());
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let a = self.0.get(i).cloned().unwrap_or_else(Coeff::zero);
            let b = rhs.0.get(i).cloned().unwrap_or_else(Coeff::zero);
            out.push(Coeff::add(&a, &b));
        }
        Self::from_coeffs(out)
    }

    pub fn neg(&self) -> Self {
        SPoly(self.0.iter().map(Coeff::neg).collect())
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.add(&rhs.neg())
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        if self.is_zero() || rhs.is_zero() {
            return Self::zero();
        }
        let mut out = vec![GaussQ::zero(); self.0.len() + rhs.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in rhs.0.iter().enumerate() {
                out[i + j] = Coeff::add(&out[i + j], &Coeff::mul(a, b));
            }
        }
        Self::from_coeffs(out)
    }

    pub fn scale(&self, c: &GaussQ) -> Self {
        Self::from_coeffs(self.0.iter().map(|a| Coeff::mul(a, c)).collect())
    }

    pub fn eval(&self, s: &GaussQ) -> GaussQ {
        let mut acc = GaussQ::zero();
        for c in self.0.iter().rev() {
            acc = Coeff::add(&Coeff::mul(&acc, s), c);
        }
        acc
    }

    pub fn eval_q(&self, s: &Q) -> GaussQ {
        self.eval(&GaussQ::from_q(s))
    }

    pub fn derivative(&self) -> Self {
        let cs = self
            .0
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| Coeff::mul(c, &GaussQ::from_i64(k as i64)))
            .collect();
        Self::from_coeffs(cs)
    }

    /// Euclidean division: self = q * div + r with deg r < deg div.
    pub fn divmod(&self, div: &Self) -> (Self, Self) {
        assert!(!div.is_zero(), "polynomial division by zero");
        let dlead = div.leading().unwrap().field_inv().expect("nonzero leading");
        let ddeg = div.degree().unwrap();
        let mut rem = self.clone();
        let mut quot = vec![GaussQ::zero(); self.0.len().saturating_sub(ddeg)];
        while let Some(rdeg) = rem.degree() {
            if rdeg < ddeg {
                break;
            }
            let factor = Coeff::mul(rem.leading().unwrap(), &dlead);
            let shift = rdeg - ddeg;
            quot[shift] = factor.clone();
            for (i, c) in div.0.iter().enumerate() {
                let t = Coeff::mul(c, &factor);
                rem.0[i + shift] = Coeff::sub(&rem.0[i + shift], &t);
            }
            rem.normalize();
        }
        (Self::from_coeffs(quot), rem)
    }

    /// Monic greatest common divisor by the Euclidean algorithm.
    pub fn gcd(&self, rhs: &Self) -> Self {
        let mut a = self.clone();
        let mut b = rhs.clone();
        while !b.is_zero() {
            let (_, r) = a.divmod(&b);
            a = b;
            b = r;
        }
        a.into_monic()
    }

    fn into_monic(self) -> Self {
        match self.leading() {
            None => self,
            Some(l) => {
                let inv = l.field_inv().expect("nonzero leading");
                self.scale(&inv)
            }
        }
    }

    /// Multiplicity of s0 as a root.
    pub fn root_multiplicity(&self, s0: &Q) -> usize {
        if self.is_zero() {
            return usize::MAX;
        }
        let lin = SPoly::from_coeffs(vec![GaussQ::from_q(&-s0.clone()), GaussQ::one()]);
        let mut mult = 0;
        let mut p = self.clone();
        loop {
            let (quot, rem) = p.divmod(&lin);
            if !rem.is_zero() {
                return mult;
            }
            mult += 1;
            p = quot;
        }
    }
}

impl fmt::Display for SPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (k, c) in self.0.iter().enumerate().rev() {
            if c.is_zero() {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match k {
                0 => write!(f, "({})", fmt_gauss(c))?,
                1 => write!(f, "({})*s", fmt_gauss(c))?,
                _ => write!(f, "({})*s^{}", fmt_gauss(c), k)?,
            }
        }
        Ok(())
    }
}

/// Reduced quotient of two s-polynomials. The denominator is monic and
/// coprime to the numerator.
#[derive(Debug, Clone, PartialEq)]
pub struct SRat {
    num: SPoly,
    den: SPoly,
}

impl SRat {
    pub fn new(num: SPoly, den: SPoly) -> Self {
        assert!(!den.is_zero(), "zero denominator");
        let mut r = SRat { num, den };
        r.reduce();
        r
    }

    /// The variable s.
    pub fn var() -> Self {
        Self::new(SPoly::var(), SPoly::one())
    }

    pub fn from_poly(p: SPoly) -> Self {
        Self::new(p, SPoly::one())
    }

    pub fn constant(c: GaussQ) -> Self {
        Self::from_poly(SPoly::constant(c))
    }

    /// The affine polynomial a*s + b.
    pub fn affine(a: &Q, b: &Q) -> Self {
        Self::from_poly(SPoly::from_coeffs(vec![
            GaussQ::from_q(b),
            GaussQ::from_q(a),
        ]))
    }

    pub fn num(&self) -> &SPoly {
        &self.num
    }

    pub fn den(&self) -> &SPoly {
        &self.den
    }

    fn reduce(&mut self) {
        if self.num.is_zero() {
            self.den = SPoly::one();
            return;
        }
        let g = self.num.gcd(&self.den);
        if g.degree().unwrap_or(0) > 0 {
            self.num = self.num.divmod(&g).0;
            self.den = self.den.divmod(&g).0;
        }
        let lead = self.den.leading().expect("nonzero denominator").clone();
        if lead != GaussQ::one() {
            let inv = lead.field_inv().expect("nonzero leading");
            self.num = self.num.scale(&inv);
            self.den = self.den.scale(&inv);
        }
    }

    /// Evaluation at a rational point; error on a pole.
    pub fn eval_q(&self, s: &Q) -> Result<GaussQ> {
        let d = self.den.eval_q(s);
        if d.is_zero() {
            return Err(Error::HigherOrderPole {
                at: crate::series_core::rational::fmt_q(s),
                order: self.den.root_multiplicity(s),
            });
        }
        Ok(Coeff::mul(&self.num.eval_q(s), &d.field_inv().unwrap()))
    }

    /// Pole order at s0 (0 at a regular point). The normal form has a
    /// coprime numerator and denominator, so this is just the root
    /// multiplicity of the denominator.
    pub fn pole_order_at(&self, s0: &Q) -> usize {
        if self.num.is_zero() {
            return 0;
        }
        self.den.root_multiplicity(s0)
    }

    /// Order of vanishing at s0; `usize::MAX` for the zero function.
    pub fn vanishing_order_at(&self, s0: &Q) -> isize {
        if self.num.is_zero() {
            return isize::MAX;
        }
        self.num.root_multiplicity(s0) as isize - self.den.root_multiplicity(s0) as isize
    }

    /// Residue at s0: zero at a regular point, N(s0)/D'(s0) at a simple
    /// pole, an error at anything deeper.
    pub fn residue_at(&self, s0: &Q) -> Result<GaussQ> {
        match self.pole_order_at(s0) {
            0 => Ok(GaussQ::zero()),
            1 => {
                let dprime = self.den.derivative().eval_q(s0);
                Ok(Coeff::mul(&self.num.eval_q(s0), &dprime.field_inv().unwrap()))
            }
            order => Err(Error::HigherOrderPole {
                at: crate::series_core::rational::fmt_q(s0),
                order,
            }),
        }
    }

    /// Limit at s0, defined whenever the pole order is zero after
    /// reduction.
    pub fn limit_at(&self, s0: &Q) -> Result<GaussQ> {
        self.eval_q(s0)
    }
}

impl Coeff for SRat {
    fn zero() -> Self {
        Self::from_poly(SPoly::zero())
    }
    fn one() -> Self {
        Self::from_poly(SPoly::one())
    }
    fn is_zero(&self) -> bool {
        self.num.is_zero()
    }
    fn add(&self, rhs: &Self) -> Self {
        let num = self
            .num
            .mul(&rhs.den)
            .add(&rhs.num.mul(&self.den));
        Self::new(num, self.den.mul(&rhs.den))
    }
    fn sub(&self, rhs: &Self) -> Self {
        Coeff::add(self, &Coeff::neg(rhs))
    }
    fn mul(&self, rhs: &Self) -> Self {
        Self::new(self.num.mul(&rhs.num), self.den.mul(&rhs.den))
    }
    fn neg(&self) -> Self {
        SRat {
            num: self.num.neg(),
            den: self.den.clone(),
        }
    }
    fn conj(&self) -> Self {
        // Conjugation fixing real s: conjugate all coefficients.
        let cmap = |p: &SPoly| SPoly::from_coeffs(p.coeffs().iter().map(Coeff::conj).collect());
        Self::new(cmap(&self.num), cmap(&self.den))
    }
    fn from_q(x: &Q) -> Self {
        Self::constant(GaussQ::from_q(x))
    }
    fn field_inv(&self) -> Option<Self> {
        if self.is_zero() {
            None
        } else {
            Some(Self::new(self.den.clone(), self.num.clone()))
        }
    }
    fn is_real(&self) -> bool {
        *self == Coeff::conj(self)
    }
    fn describe(&self) -> String {
        format!("{self}")
    }
    fn rational_pow(&self, p: &Q) -> Result<Self> {
        // Only integer powers stay inside the rational-function field.
        if !p.is_integer() {
            return Err(Error::NoRationalPower(self.describe(), fmt_q(p)));
        }
        let e: i64 = p
            .numer()
            .try_into()
            .map_err(|_| Error::NoRationalPower(self.describe(), fmt_q(p)))?;
        let base = if e < 0 {
            self.field_inv()
                .ok_or_else(|| Error::NotInvertible(self.describe()))?
        } else {
            self.clone()
        };
        let mut acc = <Self as Coeff>::one();
        for _ in 0..e.unsigned_abs() {
            acc = Coeff::mul(&acc, &base);
        }
        Ok(acc)
    }
}

impl fmt::Display for SRat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == SPoly::one() {
            write!(f, "{}", self.num)
        } else {
            write!(f, "[{}] / [{}]", self.num, self.den)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series_core::rational::q;

    fn s() -> SRat {
        SRat::var()
    }

    #[test]
    fn reduction_keeps_denominator_monic_and_coprime() {
        // (s^2 - 1)/(2s - 2) reduces to (s + 1)/2.
        let num = SPoly::from_coeffs(vec![GaussQ::from_i64(-1), GaussQ::zero(), GaussQ::one()]);
        let den = SPoly::from_coeffs(vec![GaussQ::from_i64(-2), GaussQ::from_i64(2)]);
        let r = SRat::new(num, den);
        assert_eq!(r.den(), &SPoly::one());
        assert_eq!(r.eval_q(&q(3, 1)).unwrap(), GaussQ::from_i64(2));
    }

    #[test]
    fn residue_of_simple_pole() {
        // 1/(2s - 3) at s = 3/2 has residue 1/2.
        let f = SRat::from_q(&q(1, 1));
        let den = SRat::affine(&q(2, 1), &q(-3, 1));
        let g = Coeff::mul(&f, &den.field_inv().unwrap());
        assert_eq!(g.residue_at(&q(3, 2)).unwrap(), GaussQ::from_q(&q(1, 2)));
        assert_eq!(g.pole_order_at(&q(3, 2)), 1);
    }

    #[test]
    fn residue_matching_first_scattering_coefficient() {
        // (m - s)^2 / (2s - m - 1) for m = 2 at s = 3/2: value 1/8.
        let m = 2i64;
        let num = Coeff::mul(
            &SRat::affine(&q(-1, 1), &q(m, 1)),
            &SRat::affine(&q(-1, 1), &q(m, 1)),
        );
        let den = SRat::affine(&q(2, 1), &q(-m - 1, 1));
        let f = Coeff::mul(&num, &den.field_inv().unwrap());
        assert_eq!(
            f.residue_at(&q(m + 1, 2)).unwrap(),
            GaussQ::from_q(&q(1, 8))
        );
    }

    #[test]
    fn residue_at_regular_point_is_zero() {
        let f = s();
        assert_eq!(f.residue_at(&q(5, 1)).unwrap(), GaussQ::zero());
    }

    #[test]
    fn double_pole_is_rejected() {
        let den = Coeff::mul(
            &SRat::affine(&q(1, 1), &q(-1, 1)),
            &SRat::affine(&q(1, 1), &q(-1, 1)),
        );
        let f = den.field_inv().unwrap();
        match f.residue_at(&q(1, 1)) {
            Err(crate::Error::HigherOrderPole { order: 2, .. }) => {}
            other => panic!("expected order-2 pole error, got {other:?}"),
        }
    }

    #[test]
    fn vanishing_order() {
        // (s - 2)^2 / s vanishes to order 2 at s = 2, has a pole at 0.
        let f = Coeff::mul(
            &Coeff::mul(
                &SRat::affine(&q(1, 1), &q(-2, 1)),
                &SRat::affine(&q(1, 1), &q(-2, 1)),
            ),
            &s().field_inv().unwrap(),
        );
        assert_eq!(f.vanishing_order_at(&q(2, 1)), 2);
        assert_eq!(f.vanishing_order_at(&q(0, 1)), -1);
        assert_eq!(f.vanishing_order_at(&q(1, 1)), 0);
    }
}
