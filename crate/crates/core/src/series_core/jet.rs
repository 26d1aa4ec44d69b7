//! Truncated multivariate power series (jets) in a fixed variable
//! signature, with conjugation, composition, and formal inversion.
//!
//! Monomials are exponent vectors keyed in a `BTreeMap`, so iteration
//! order is the lexicographic order on exponents and all derived output
//! is deterministic.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use crate::series_core::rational::{Coeff, Q};
use crate::{Error, Result};

/// Role of a variable under conjugation: fixed, or half of a
/// holomorphic/antiholomorphic pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Real,
    Holo { conj: usize },
    Anti { conj: usize },
}

/// A named, ordered variable list with its conjugation involution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vars {
    names: Vec<String>,
    kinds: Vec<VarKind>,
}

impl Vars {
    pub fn new(names: Vec<String>, kinds: Vec<VarKind>) -> Arc<Self> {
        assert_eq!(names.len(), kinds.len());
        for (i, k) in kinds.iter().enumerate() {
            match *k {
                VarKind::Real => {}
                VarKind::Holo { conj } => {
                    assert_eq!(kinds[conj], VarKind::Anti { conj: i }, "broken pairing");
                }
                VarKind::Anti { conj } => {
                    assert_eq!(kinds[conj], VarKind::Holo { conj: i }, "broken pairing");
                }
            }
        }
        Arc::new(Vars { names, kinds })
    }

    /// Ambient holomorphic chart: z1..zm followed by their conjugates.
    pub fn ambient(m: usize) -> Arc<Self> {
        let mut names = Vec::with_capacity(2 * m);
        let mut kinds = Vec::with_capacity(2 * m);
        for j in 1..=m {
            names.push(format!("z{j}"));
            kinds.push(VarKind::Holo { conj: m + j - 1 });
        }
        for j in 1..=m {
            names.push(format!("zb{j}"));
            kinds.push(VarKind::Anti { conj: j - 1 });
        }
        Vars::new(names, kinds)
    }

    /// Collar chart: the defining function x, the contact coordinate t,
    /// then n tangential pairs w/wb. x must stay the first variable; the
    /// split truncation and the x-coefficient calculus rely on it.
    pub fn collar(n: usize) -> Arc<Self> {
        let mut names = vec!["x".to_string(), "t".to_string()];
        let mut kinds = vec![VarKind::Real, VarKind::Real];
        for a in 1..=n {
            names.push(format!("w{a}"));
            kinds.push(VarKind::Holo { conj: 2 + n + a - 1 });
        }
        for a in 1..=n {
            names.push(format!("wb{a}"));
            kinds.push(VarKind::Anti { conj: 2 + a - 1 });
        }
        Vars::new(names, kinds)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn kind(&self, i: usize) -> VarKind {
        self.kinds[i]
    }

    /// Index of the conjugate variable (itself for a real variable).
    pub fn conj_of(&self, i: usize) -> usize {
        match self.kinds[i] {
            VarKind::Real => i,
            VarKind::Holo { conj } | VarKind::Anti { conj } => conj,
        }
    }

    pub fn describe(&self) -> String {
        self.names.join(",")
    }
}

/// Truncation region. `Total(n)` keeps total degree <= n. `Split` keeps
/// degree in the first variable <= `head` and total degree in the
/// remaining variables <= `tail`; it is the natural region for collar
/// series, whose x-coefficients are boundary jets of fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trunc {
    Total(u16),
    Split { head: u16, tail: u16 },
}

impl Trunc {
    fn keeps(&self, key: &[u16]) -> bool {
        match *self {
            Trunc::Total(n) => key_total(key) <= n as usize,
            Trunc::Split { head, tail } => {
                key[0] <= head && key_total(&key[1..]) <= tail as usize
            }
        }
    }

    /// Max total degree of any kept monomial; bounds fixed-point loops.
    pub fn degree_bound(&self) -> usize {
        match *self {
            Trunc::Total(n) => n as usize,
            Trunc::Split { head, tail } => head as usize + tail as usize,
        }
    }

    fn after_derive(&self, i: usize) -> Trunc {
        match *self {
            Trunc::Total(n) => Trunc::Total(n.saturating_sub(1)),
            Trunc::Split { head, tail } => {
                if i == 0 {
                    Trunc::Split { head: head.saturating_sub(1), tail }
                } else {
                    Trunc::Split { head, tail: tail.saturating_sub(1) }
                }
            }
        }
    }

    /// Coarsest common refinement: the region both truncations certify.
    pub fn meet(&self, other: &Trunc) -> Trunc {
        match (*self, *other) {
            (Trunc::Total(a), Trunc::Total(b)) => Trunc::Total(a.min(b)),
            (
                Trunc::Split { head: h1, tail: t1 },
                Trunc::Split { head: h2, tail: t2 },
            ) => Trunc::Split { head: h1.min(h2), tail: t1.min(t2) },
            _ => panic!("cannot mix Total and Split truncation regions"),
        }
    }

    /// True when every monomial kept by `self` is kept by `other`, i.e.
    /// re-truncating from `other` to `self` loses no known region.
    fn subset_of(&self, other: &Trunc) -> bool {
        match (*self, *other) {
            (Trunc::Total(a), Trunc::Total(b)) => a <= b,
            (
                Trunc::Split { head: h1, tail: t1 },
                Trunc::Split { head: h2, tail: t2 },
            ) => h1 <= h2 && t1 <= t2,
            (Trunc::Split { head, tail }, Trunc::Total(n)) => {
                head as usize + tail as usize <= n as usize
            }
            (Trunc::Total(n), Trunc::Split { head, tail }) => n <= head && n <= tail,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Trunc::Total(n) => format!("total<={n}"),
            Trunc::Split { head, tail } => format!("x<={head},bdy<={tail}"),
        }
    }
}

fn key_total(key: &[u16]) -> usize {
    key.iter().map(|&e| e as usize).sum()
}

/// A truncated power series with coefficients in `C`. The `real` field
/// is a conservative hint that the jet is fixed by conjugation; it is
/// maintained by the arithmetic and verified exactly by `is_real`.
#[derive(Debug, Clone)]
pub struct Jet<C: Coeff> {
    vars: Arc<Vars>,
    trunc: Trunc,
    terms: std::collections::BTreeMap<Vec<u16>, C>,
    real: bool,
}

impl<C: Coeff> PartialEq for Jet<C> {
    fn eq(&self, other: &Self) -> bool {
        self.vars == other.vars && self.trunc == other.trunc && self.terms == other.terms
    }
}

impl<C: Coeff> Jet<C> {
    pub fn zero(vars: &Arc<Vars>, trunc: Trunc) -> Self {
        Jet {
            vars: Arc::clone(vars),
            trunc,
            terms: Default::default(),
            real: true,
        }
    }

    pub fn constant(vars: &Arc<Vars>, trunc: Trunc, c: C) -> Self {
        let mut jet = Self::zero(vars, trunc);
        jet.real = c.is_real();
        jet.insert(vec![0; vars.len()], c);
        jet
    }

    pub fn one(vars: &Arc<Vars>, trunc: Trunc) -> Self {
        Self::constant(vars, trunc, C::one())
    }

    pub fn from_q(vars: &Arc<Vars>, trunc: Trunc, x: &Q) -> Self {
        Self::constant(vars, trunc, C::from_q(x))
    }

    /// The i-th coordinate as a jet.
    pub fn var(vars: &Arc<Vars>, trunc: Trunc, i: usize) -> Self {
        let mut jet = Self::zero(vars, trunc);
        jet.real = vars.kind(i) == VarKind::Real;
        let mut key = vec![0u16; vars.len()];
        key[i] = 1;
        jet.insert(key, C::one());
        jet
    }

    /// A single monomial c * prod(var_i ^ key_i).
    pub fn monomial(vars: &Arc<Vars>, trunc: Trunc, key: Vec<u16>, c: C) -> Self {
        let mut jet = Self::zero(vars, trunc);
        jet.real = false;
        jet.insert(key, c);
        jet
    }

    fn insert(&mut self, key: Vec<u16>, c: C) {
        assert_eq!(key.len(), self.vars.len(), "exponent arity mismatch");
        if c.is_zero() || !self.trunc.keeps(&key) {
            return;
        }
        self.terms.insert(key, c);
    }

    fn add_to(&mut self, key: &[u16], c: &C) {
        if c.is_zero() || !self.trunc.keeps(key) {
            return;
        }
        match self.terms.get_mut(key) {
            Some(slot) => {
                *slot = slot.add(c);
                if slot.is_zero() {
                    self.terms.remove(key);
                }
            }
            None => {
                self.terms.insert(key.to_vec(), c.clone());
            }
        }
    }

    pub fn vars(&self) -> &Arc<Vars> {
        &self.vars
    }

    pub fn trunc(&self) -> Trunc {
        self.trunc
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u16], &C)> {
        self.terms.iter().map(|(k, c)| (k.as_slice(), c))
    }

    pub fn is_zero_jet(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Constant term.
    pub fn c0(&self) -> C {
        let key = vec![0u16; self.vars.len()];
        self.terms.get(&key).cloned().unwrap_or_else(C::zero)
    }

    pub fn coeff(&self, key: &[u16]) -> C {
        self.terms.get(key).cloned().unwrap_or_else(C::zero)
    }

    /// Lowest total degree among nonzero terms.
    pub fn min_total_degree(&self) -> Option<usize> {
        self.terms.keys().map(|k| key_total(k)).min()
    }

    /// Real-hint flag; conservative, verified exactly by `is_real`.
    pub fn real_hint(&self) -> bool {
        self.real
    }

    /// Exact reality check: equality with the conjugate jet.
    pub fn is_real(&self) -> bool {
        *self == self.conj()
    }

    pub fn checked_binop(&self, rhs: &Self) -> Result<()> {
        if self.vars != rhs.vars {
            return Err(Error::SignatureMismatch(
                self.vars.describe(),
                rhs.vars.describe(),
            ));
        }
        if self.trunc != rhs.trunc {
            return Err(Error::TruncationMismatch(
                self.trunc.describe(),
                rhs.trunc.describe(),
            ));
        }
        Ok(())
    }

    fn binop_region(&self, rhs: &Self) -> (Arc<Vars>, Trunc) {
        assert!(
            self.vars == rhs.vars,
            "variable signatures differ: {} vs {}",
            self.vars.describe(),
            rhs.vars.describe()
        );
        (Arc::clone(&self.vars), self.trunc.meet(&rhs.trunc))
    }

    pub fn scalar_mul(&self, c: &C) -> Self {
        let mut out = Self::zero(&self.vars, self.trunc);
        out.real = self.real && c.is_real();
        for (k, a) in &self.terms {
            out.insert(k.clone(), a.mul(c));
        }
        out
    }

    pub fn scalar_q(&self, x: &Q) -> Self {
        self.scalar_mul(&C::from_q(x))
    }

    /// Conjugate jet: coefficients conjugated, exponents permuted by the
    /// conjugation involution of the signature.
    pub fn conj(&self) -> Self {
        let mut out = Self::zero(&self.vars, self.trunc);
        out.real = self.real;
        let n = self.vars.len();
        for (k, c) in &self.terms {
            let mut key = vec![0u16; n];
            for i in 0..n {
                key[i] = k[self.vars.conj_of(i)];
            }
            out.insert(key, c.conj());
        }
        out
    }

    /// Partial derivative in variable i. The truncation tightens: one
    /// order in x for i = 0 under split truncation, one total order
    /// otherwise.
    pub fn derive(&self, i: usize) -> Self {
        let mut out = Self::zero(&self.vars, self.trunc.after_derive(i));
        out.real = self.real && self.vars.kind(i) == VarKind::Real;
        for (k, c) in &self.terms {
            let e = k[i];
            if e == 0 {
                continue;
            }
            let mut key = k.clone();
            key[i] = e - 1;
            let scaled = c.mul(&C::from_i64(e as i64));
            out.add_to(&key, &scaled);
        }
        out
    }

    /// Coefficient of var0^k (the x-power in a collar jet), returned as
    /// a jet in the same signature with zero x-exponent. Under total
    /// truncation the extracted jet is only known to order total - k.
    pub fn x_coefficient(&self, k: u16) -> Self {
        let trunc = match self.trunc {
            Trunc::Total(n) => Trunc::Total(n.saturating_sub(k)),
            split => split,
        };
        let mut out = Self::zero(&self.vars, trunc);
        out.real = self.real && self.vars.kind(0) == VarKind::Real;
        for (key, c) in &self.terms {
            if key[0] == k {
                let mut kk = key.clone();
                kk[0] = 0;
                out.insert(kk, c.clone());
            }
        }
        out
    }

    /// Multiplies by var0^k, for reassembling collar series from
    /// x-coefficients.
    pub fn times_x_power(&self, k: u16) -> Self {
        let mut out = Self::zero(&self.vars, self.trunc);
        out.real = self.real && self.vars.kind(0) == VarKind::Real;
        for (key, c) in &self.terms {
            let mut kk = key.clone();
            kk[0] += k;
            out.insert(kk, c.clone());
        }
        out
    }

    /// Euler operator var0 ∂_{var0}; exact, so the truncation region is
    /// kept in full, unlike a derive followed by times_x_power.
    pub fn euler_x(&self) -> Self {
        let mut out = Self::zero(&self.vars, self.trunc);
        out.real = self.real && self.vars.kind(0) == VarKind::Real;
        for (key, c) in &self.terms {
            if key[0] == 0 {
                continue;
            }
            out.insert(key.clone(), c.mul(&C::from_i64(key[0] as i64)));
        }
        out
    }

    /// Exact division by variable i; an error if any term lacks it.
    pub fn divide_by_var(&self, i: usize) -> Result<Self> {
        let trunc = self.trunc.after_derive(i);
        let mut out = Self::zero(&self.vars, trunc);
        out.real = self.real && self.vars.kind(i) == VarKind::Real;
        for (key, c) in &self.terms {
            if key[i] == 0 {
                return Err(Error::InexactDivision(format!(
                    "term {} has no factor {}",
                    fmt_key(&self.vars, key),
                    self.vars.name(i)
                )));
            }
            let mut kk = key.clone();
            kk[i] -= 1;
            out.insert(kk, c.clone());
        }
        Ok(out)
    }

    /// Re-truncates to a subregion of the current truncation.
    pub fn truncate_to(&self, trunc: Trunc) -> Self {
        assert!(
            trunc.subset_of(&self.trunc),
            "cannot widen truncation {} to {}",
            self.trunc.describe(),
            trunc.describe()
        );
        let mut out = Self::zero(&self.vars, trunc);
        out.real = self.real;
        for (k, c) in &self.terms {
            out.insert(k.clone(), c.clone());
        }
        out
    }

    /// Maps coefficients into another field. `keeps_reality` tells
    /// whether the map commutes with conjugation.
    pub fn map_coeffs<D: Coeff>(
        &self,
        trunc: Trunc,
        keeps_reality: bool,
        f: impl Fn(&C) -> D,
    ) -> Jet<D> {
        let mut out = Jet::<D>::zero(&self.vars, trunc);
        out.real = self.real && keeps_reality;
        for (k, c) in &self.terms {
            out.insert(k.clone(), f(c));
        }
        out
    }

    /// Multiplicative inverse of a jet with invertible constant term,
    /// through the fixed-point iteration acc <- 1 + (1 - u/c0) * acc.
    pub fn inverse(&self) -> Result<Self> {
        let c0 = self.c0();
        let c0_inv = c0
            .field_inv()
            .ok_or_else(|| Error::NotInvertible(c0.describe()))?;
        let e = {
            // 1 - u/c0, which vanishes at the origin.
            let scaled = self.scalar_mul(&c0_inv);
            &Self::one(&self.vars, self.trunc) - &scaled
        };
        let mut acc = Self::one(&self.vars, self.trunc);
        for _ in 0..self.trunc.degree_bound() {
            acc = &Self::one(&self.vars, self.trunc) + &(&e * &acc);
        }
        Ok(acc.scalar_mul(&c0_inv))
    }

    /// Rational power u^p. The constant term must admit an exact
    /// rational p-th power; the rest is the binomial series.
    pub fn pow_q(&self, p: &Q) -> Result<Self> {
        let c0 = self.c0();
        let lead = c0.rational_pow(p)?;
        let c0_inv = c0
            .field_inv()
            .ok_or_else(|| Error::NotInvertible(c0.describe()))?;
        let e = &self.scalar_mul(&c0_inv) - &Self::one(&self.vars, self.trunc);
        let mut acc = Self::one(&self.vars, self.trunc);
        let mut epow = Self::one(&self.vars, self.trunc);
        let mut binom = Q::from_integer(1.into());
        for k in 1..=self.trunc.degree_bound() {
            epow = &epow * &e;
            if epow.is_zero_jet() {
                break;
            }
            let kq = Q::from_integer(k.into());
            binom = binom * (p - (kq.clone() - Q::from_integer(1.into()))) / kq;
            acc = &acc + &epow.scalar_q(&binom);
        }
        Ok(acc.scalar_mul(&lead))
    }

    /// Splits log u as (u(0), log(u / u(0))) with the series part given
    /// by the alternating Mercator sum. Only derivatives of the series
    /// part are meaningful downstream; the constant's log stays
    /// symbolic.
    pub fn log_split(&self) -> Result<(C, Self)> {
        let c0 = self.c0();
        let c0_inv = c0
            .field_inv()
            .ok_or_else(|| Error::NotInvertible(c0.describe()))?;
        let e = &self.scalar_mul(&c0_inv) - &Self::one(&self.vars, self.trunc);
        let mut acc = Self::zero(&self.vars, self.trunc);
        let mut epow = Self::one(&self.vars, self.trunc);
        for k in 1..=self.trunc.degree_bound() {
            epow = &epow * &e;
            if epow.is_zero_jet() {
                break;
            }
            let sign = if k % 2 == 1 { 1 } else { -1 };
            acc = &acc + &epow.scalar_q(&Q::new(sign.into(), (k as i64).into()));
        }
        Ok((c0, acc))
    }

    /// Substitutes `images[i]` for variable i. Images must share a
    /// common signature and truncation and vanish at the origin, so that
    /// truncation of the source controls truncation of the result. Only
    /// totally-truncated sources are accepted: a dropped source monomial
    /// of degree > n then only pollutes target degrees > n, which the
    /// effective target truncation discards. A split-truncated source
    /// has no such guarantee (its dropped tail can re-enter the kept
    /// rectangle through images with transversal constant speed).
    pub fn substitute<D: Coeff>(
        &self,
        images: &[Jet<D>],
        lift: impl Fn(&C) -> D,
    ) -> Jet<D> {
        assert_eq!(images.len(), self.vars.len(), "one image per variable");
        let n = match self.trunc {
            Trunc::Total(n) => n,
            Trunc::Split { .. } => panic!("substitution of a split-truncated source is unsound"),
        };
        let tvars = Arc::clone(images[0].vars());
        let raw = images[0].trunc();
        for im in images {
            assert!(im.vars == tvars && im.trunc == raw, "uneven images");
            assert!(im.c0().is_zero(), "image must vanish at the origin");
        }
        let ttrunc = match raw {
            Trunc::Total(t) => Trunc::Total(t.min(n)),
            split => {
                assert!(
                    split.degree_bound() <= n as usize,
                    "source truncation {} too coarse for target {}",
                    self.trunc.describe(),
                    split.describe()
                );
                split
            }
        };
        let images: Vec<Jet<D>> = images.iter().map(|im| im.truncate_to(ttrunc)).collect();
        let images = images.as_slice();

        // Lexicographic walk with cached prefix products: consecutive
        // keys share leading exponents, so only the suffix is redone.
        let nv = self.vars.len();
        let mut powers: Vec<Vec<Jet<D>>> = images
            .iter()
            .map(|im| vec![Jet::<D>::one(&tvars, ttrunc), im.clone()])
            .collect();
        let mut prefix: Vec<Jet<D>> = vec![Jet::<D>::one(&tvars, ttrunc); nv + 1];
        let mut prev_key: Option<Vec<u16>> = None;
        let mut out = Jet::<D>::zero(&tvars, ttrunc);

        for (key, c) in &self.terms {
            let start = match &prev_key {
                None => 0,
                Some(prev) => (0..nv).find(|&i| prev[i] != key[i]).unwrap_or(nv),
            };
            for i in start..nv {
                let e = key[i] as usize;
                while powers[i].len() <= e {
                    let next = &powers[i][powers[i].len() - 1] * &images[i];
                    powers[i].push(next);
                }
                prefix[i + 1] = if e == 0 {
                    prefix[i].clone()
                } else {
                    &prefix[i] * &powers[i][e]
                };
            }
            out = &out + &prefix[nv].scalar_mul(&lift(c));
            prev_key = Some(key.clone());
        }
        out
    }

    /// Composition within one signature: substitute while keeping the
    /// coefficient field.
    pub fn compose(&self, images: &[Jet<C>]) -> Jet<C> {
        self.substitute(images, C::clone)
    }
}

fn fmt_key(vars: &Vars, key: &[u16]) -> String {
    let mut parts = Vec::new();
    for (i, &e) in key.iter().enumerate() {
        match e {
            0 => {}
            1 => parts.push(vars.name(i).to_string()),
            _ => parts.push(format!("{}^{}", vars.name(i), e)),
        }
    }
    if parts.is_empty() {
        "1".to_string()
    } else {
        parts.join("*")
    }
}

impl<C: Coeff> fmt::Display for Jet<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (k, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({})*{}", c.describe(), fmt_key(&self.vars, k))?;
        }
        Ok(())
    }
}

impl<'a, C: Coeff> Add<&'a Jet<C>> for &'a Jet<C> {
    type Output = Jet<C>;
    fn add(self, rhs: &'a Jet<C>) -> Jet<C> {
        let (vars, trunc) = self.binop_region(rhs);
        let mut out = Jet::zero(&vars, trunc);
        out.real = self.real && rhs.real;
        for (k, c) in &self.terms {
            out.add_to(k, c);
        }
        for (k, c) in &rhs.terms {
            out.add_to(k, c);
        }
        out
    }
}

impl<'a, C: Coeff> Sub<&'a Jet<C>> for &'a Jet<C> {
    type Output = Jet<C>;
    fn sub(self, rhs: &'a Jet<C>) -> Jet<C> {
        let (vars, trunc) = self.binop_region(rhs);
        let mut out = Jet::zero(&vars, trunc);
        out.real = self.real && rhs.real;
        for (k, c) in &self.terms {
            out.add_to(k, c);
        }
        for (k, c) in &rhs.terms {
            out.add_to(k, &c.neg());
        }
        out
    }
}

impl<'a, C: Coeff> Mul<&'a Jet<C>> for &'a Jet<C> {
    type Output = Jet<C>;
    fn mul(self, rhs: &'a Jet<C>) -> Jet<C> {
        let (vars, trunc) = self.binop_region(rhs);
        let mut out = Jet::zero(&vars, trunc);
        out.real = self.real && rhs.real;
        let nv = vars.len();
        let mut key = vec![0u16; nv];
        for (ka, a) in &self.terms {
            for (kb, b) in &rhs.terms {
                for i in 0..nv {
                    key[i] = ka[i] + kb[i];
                }
                if !trunc.keeps(&key) {
                    continue;
                }
                out.add_to(&key, &a.mul(b));
            }
        }
        out
    }
}

impl<C: Coeff> Neg for &Jet<C> {
    type Output = Jet<C>;
    fn neg(self) -> Jet<C> {
        let mut out = Jet::zero(&self.vars, self.trunc);
        out.real = self.real;
        for (k, c) in &self.terms {
            out.insert(k.clone(), c.neg());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series_core::rational::{gq, q, GaussQ};

    type GJet = Jet<GaussQ>;

    fn amb2() -> (Arc<Vars>, Trunc) {
        (Vars::ambient(1), Trunc::Total(6))
    }

    #[test]
    fn conjugation_and_reality() {
        let (vars, tr) = amb2();
        let z = GJet::var(&vars, tr, 0);
        let zb = GJet::var(&vars, tr, 1);
        assert!(!z.is_real());
        let r = &z + &zb;
        assert!(r.is_real());
        assert!(r.real_hint() || r.is_real());
        let i_diff = (&z - &zb).scalar_mul(&gq(0, 1, 1, 1));
        assert!(i_diff.is_real(), "i(z - zb) is real");
        assert_eq!(z.conj(), zb);
    }

    #[test]
    fn geometric_inverse() {
        let (vars, tr) = amb2();
        let z = GJet::var(&vars, tr, 0);
        let zb = GJet::var(&vars, tr, 1);
        let u = &GJet::one(&vars, tr) - &(&z * &zb);
        let inv = u.inverse().unwrap();
        // 1/(1 - z zb) = sum (z zb)^k
        for k in 0..=3u16 {
            assert_eq!(inv.coeff(&[k, k]), GaussQ::one(), "power {k}");
        }
        let prod = &u * &inv;
        assert_eq!(prod, GJet::one(&vars, tr));
    }

    #[test]
    fn rational_power_roundtrip() {
        let (vars, tr) = amb2();
        let z = GJet::var(&vars, tr, 0);
        let zb = GJet::var(&vars, tr, 1);
        let base = &GJet::constant(&vars, tr, gq(4, 1, 0, 1)) + &(&z * &zb);
        let root = base.pow_q(&q(1, 2)).unwrap();
        assert_eq!(root.c0(), gq(2, 1, 0, 1));
        assert_eq!(&root * &root, base);
        let bad = &GJet::constant(&vars, tr, gq(2, 1, 0, 1)) + &(&z * &zb);
        assert!(bad.pow_q(&q(1, 2)).is_err());
    }

    #[test]
    fn log_is_additive() {
        let (vars, tr) = amb2();
        let z = GJet::var(&vars, tr, 0);
        let zb = GJet::var(&vars, tr, 1);
        let a = &GJet::one(&vars, tr) + &z;
        let b = &GJet::one(&vars, tr) + &zb;
        let (ca, la) = a.log_split().unwrap();
        let (cb, lb) = b.log_split().unwrap();
        let (cab, lab) = (&a * &b).log_split().unwrap();
        assert_eq!(ca, GaussQ::one());
        assert_eq!(cb, GaussQ::one());
        assert_eq!(cab, GaussQ::one());
        assert_eq!(lab, &la + &lb);
        // Mercator: coefficient of z^3 in log(1+z) is 1/3.
        assert_eq!(la.coeff(&[3, 0]), GaussQ::from_q(&q(1, 3)));
    }

    #[test]
    fn substitution_prefix_walk() {
        let (vars, tr) = amb2();
        let z = GJet::var(&vars, tr, 0);
        let zb = GJet::var(&vars, tr, 1);
        let f = &(&z * &z) * &zb; // z^2 zb
        let gz = &z + &(&z * &z);
        let gzb = gz.conj();
        let image = f.compose(&[gz.clone(), gzb.clone()]);
        let expect = &(&gz * &gz) * &gzb;
        assert_eq!(image, expect);
    }

    #[test]
    fn derivative_tightens_truncation() {
        let (vars, tr) = amb2();
        let z = GJet::var(&vars, tr, 0);
        let zb = GJet::var(&vars, tr, 1);
        let f = &(&z * &z) * &zb;
        let df = f.derive(0);
        assert_eq!(df.trunc(), Trunc::Total(5));
        assert_eq!(df.coeff(&[1, 1]), gq(2, 1, 0, 1));
        // 2 z zb is conjugation invariant even though the hint is
        // conservative after a holomorphic derivative.
        assert!(df.is_real());
        assert!(!df.real_hint());
    }

    #[test]
    fn split_truncation_rectangle() {
        let vars = Vars::collar(1);
        let tr = Trunc::Split { head: 2, tail: 4 };
        let x = GJet::var(&vars, tr, 0);
        let w = GJet::var(&vars, tr, 2);
        let wb = GJet::var(&vars, tr, 3);
        let rho = &w * &wb;
        // x^3 falls outside the head bound.
        let x3 = &(&x * &x) * &x;
        assert!(x3.is_zero_jet());
        // x^2 * w * wb survives: head 2, tail degree 2 <= 4.
        let m = &(&x * &x) * &rho;
        assert_eq!(m.coeff(&[2, 0, 1, 1]), GaussQ::one());
        // (w wb)^2 sits on the tail bound; (w wb)^3 overflows it.
        let m2 = &rho * &rho;
        assert!((&m2 * &rho).is_zero_jet());
        assert_eq!(m2.coeff(&[0, 0, 2, 2]), GaussQ::one());
    }

    #[test]
    fn x_coefficient_extraction() {
        let vars = Vars::collar(1);
        let tr = Trunc::Split { head: 3, tail: 2 };
        let x = GJet::var(&vars, tr, 0);
        let w = GJet::var(&vars, tr, 2);
        let wb = GJet::var(&vars, tr, 3);
        let f = &(&GJet::one(&vars, tr) + &(&x * &(&w * &wb))) + &(&x * &x);
        let f0 = f.x_coefficient(0);
        let f1 = f.x_coefficient(1);
        let f2 = f.x_coefficient(2);
        assert_eq!(f0, GJet::one(&vars, tr));
        assert_eq!(f1, &w * &wb);
        assert_eq!(f2, GJet::one(&vars, tr));
        let back = &(&f0 + &f1.times_x_power(1)) + &f2.times_x_power(2);
        assert_eq!(back, f);
    }

    #[test]
    fn exact_division_by_variable() {
        let vars = Vars::collar(1);
        let tr = Trunc::Split { head: 3, tail: 2 };
        let x = GJet::var(&vars, tr, 0);
        let w = GJet::var(&vars, tr, 2);
        let f = &(&x * &x) + &(&x * &w);
        let g = f.divide_by_var(0).unwrap();
        assert_eq!(g, (&x + &w).truncate_to(g.trunc()));
        assert!((&f + &GJet::one(&vars, tr)).divide_by_var(0).is_err());
    }

    #[test]
    fn checked_binop_rejects_mixing() {
        let (vars, tr) = amb2();
        let other_vars = Vars::ambient(2);
        let a = GJet::one(&vars, tr);
        let b = GJet::one(&other_vars, tr);
        assert!(matches!(
            a.checked_binop(&b),
            Err(Error::SignatureMismatch(_, _))
        ));
        let c = GJet::one(&vars, Trunc::Total(4));
        assert!(matches!(
            a.checked_binop(&c),
            Err(Error::TruncationMismatch(_, _))
        ));
    }
}
