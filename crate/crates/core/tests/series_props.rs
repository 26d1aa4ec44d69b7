//! Property tests for the exact series layer: ring laws, inversion,
//! rational powers, reality, and rational-function arithmetic in s.

use std::sync::Arc;

use cr_scatter_core::series_core::{gq, q, Coeff, GaussQ, Jet, SPoly, SRat, Trunc, Vars};
use proptest::prelude::*;

const TR: Trunc = Trunc::Total(4);

fn arb_gq() -> impl Strategy<Value = GaussQ> {
    (-9i64..=9, 1i64..=9, -9i64..=9, 1i64..=9).prop_map(|(a, b, c, d)| gq(a, b, c, d))
}

fn arb_jet() -> impl Strategy<Value = Jet<GaussQ>> {
    proptest::collection::vec(((0u16..=3, 0u16..=3), arb_gq()), 0..6).prop_map(|terms| {
        let vars: Arc<Vars> = Vars::ambient(1);
        let mut jet = Jet::zero(&vars, TR);
        for ((a, b), c) in terms {
            jet = &jet + &Jet::monomial(&vars, TR, vec![a, b], c);
        }
        jet
    })
}

/// A jet whose constant term is the given positive square k^2.
fn with_square_constant(jet: &Jet<GaussQ>, k: i64) -> Jet<GaussQ> {
    let vars = jet.vars().clone();
    let shift = Coeff::sub(&gq(k * k, 1, 0, 1), &jet.c0());
    jet + &Jet::constant(&vars, TR, shift)
}

fn arb_spoly() -> impl Strategy<Value = SPoly> {
    proptest::collection::vec(arb_gq(), 1..4).prop_map(SPoly::from_coeffs)
}

fn arb_srat() -> impl Strategy<Value = SRat> {
    (arb_spoly(), arb_spoly()).prop_filter_map("zero denominator", |(num, den)| {
        if den.is_zero() {
            None
        } else {
            Some(SRat::new(num, den))
        }
    })
}

proptest! {
    #[test]
    fn jet_ring_axioms(a in arb_jet(), b in arb_jet(), c in arb_jet()) {
        prop_assert_eq!(&(&a + &b) + &c, &a + &(&b + &c));
        prop_assert_eq!(&a * &b, &b * &a);
        prop_assert_eq!(&a * &(&b + &c), &(&a * &b) + &(&a * &c));
        prop_assert_eq!(&(&a * &b) * &c, &a * &(&b * &c));
        prop_assert_eq!(&(&a + &b) - &b, a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn jet_inverse_roundtrip(a in arb_jet(), k in 1i64..=6) {
        let u = with_square_constant(&a, k);
        let inv = u.inverse().unwrap();
        let one = Jet::one(u.vars(), TR);
        prop_assert_eq!(&u * &inv, one);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn jet_rational_power_roundtrip(a in arb_jet(), k in 1i64..=4) {
        let u = with_square_constant(&a, k);
        // (u^2)^(1/2) recovers u: same square, same positive constant.
        let sq = u.pow_q(&q(2, 1)).unwrap();
        prop_assert_eq!(sq.pow_q(&q(1, 2)).unwrap(), u.clone());
        // u^(3/2) * u^(-3/2) = 1, legal because u(0) = k^2 is a square.
        let p = u.pow_q(&q(3, 2)).unwrap();
        let n = u.pow_q(&q(-3, 2)).unwrap();
        let one = Jet::one(u.vars(), TR);
        prop_assert_eq!(&p * &n, one);
    }

    #[test]
    fn jet_reality_preserved(a in arb_jet(), b in arb_jet()) {
        let ra = &a + &a.conj();
        let rb = &b * &b.conj();
        prop_assert!(ra.is_real());
        prop_assert!(rb.is_real());
        prop_assert!((&ra + &rb).is_real());
        prop_assert!((&ra * &rb).is_real());
        prop_assert!(ra.derive(0).derive(1).is_real());
    }

    #[test]
    fn srat_addition_cancels(f in arb_srat(), g in arb_srat()) {
        let sum = Coeff::add(&f, &g);
        prop_assert_eq!(Coeff::sub(&sum, &g), f);
    }

    #[test]
    fn srat_distributes(f in arb_srat(), g in arb_srat(), h in arb_srat()) {
        let lhs = Coeff::mul(&f, &Coeff::add(&g, &h));
        let rhs = Coeff::add(&Coeff::mul(&f, &g), &Coeff::mul(&f, &h));
        prop_assert_eq!(lhs, rhs);
    }
}
