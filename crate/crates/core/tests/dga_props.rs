mod common;

use azumaya_core::dga::{
    ad_rank, check_laws, inner_derivation, pushforward_derivation, split_derivation, DerivationData, PolyMatrix,
    QMatrix,
};
use azumaya_core::jet::FnSpec;
use azumaya_core::linalg::ComplexMatrix;
use azumaya_core::point::{evaluate, Smoothness};
use num::complex::Complex64;
use proptest::prelude::*;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

fn random_poly_matrix(rng: &mut ChaCha8Rng, r: usize, degree: usize) -> PolyMatrix {
    let coeffs = (0..=degree)
        .map(|_| ComplexMatrix::from_fn(r, r, |_, _| Complex64::new(rng.random_range(-1.0..1.0), 0.0)))
        .collect();
    PolyMatrix::from_coeffs(r, coeffs)
}

#[test]
fn inner_derivations_have_dimension_r_squared_minus_one() {
    for r in 2..=4 {
        assert_eq!(ad_rank(r), r * r - 1);
    }
}

#[test]
fn differential_laws_hold_up_to_degree_three() {
    for r in [2, 3] {
        let report = check_laws(r, 3);
        assert!(report.pass, "{report:?}");
        assert_eq!(report.d_squared.failures, 0);
        assert_eq!(report.leibniz.failures, 0);
        assert_eq!(report.antisymmetry.failures, 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pushforward_obeys_the_twisted_leibniz_rule(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let s = common::random_point_map(&mut rng, 4, 2, Smoothness::Infinite);
        let (n, r) = (s.map.dim(), s.map.rank());
        let values: Vec<i64> = (0..r * r).map(|_| rng.random_range(-3..=3)).collect();
        let theta = inner_derivation(&QMatrix::from_integers(r, &values));
        let f = common::random_poly(&mut rng, n, 3);
        let g = common::random_poly(&mut rng, n, 3);
        let (pf, pg) = (FnSpec::poly(f.clone()), FnSpec::poly(g.clone()));
        let lhs = pushforward_derivation(&s.map, &theta, &FnSpec::poly(&f * &g)).unwrap();
        let (ef, eg) = (evaluate(&s.map, &pf).unwrap(), evaluate(&s.map, &pg).unwrap());
        let tf = pushforward_derivation(&s.map, &theta, &pf).unwrap();
        let tg = pushforward_derivation(&s.map, &theta, &pg).unwrap();
        let rhs = &tf * &eg + &ef * &tg;
        let scale = (tf.norm() * eg.norm() + ef.norm() * tg.norm()).max(1.0);
        prop_assert!((&lhs - &rhs).norm() <= 1e-9 * scale, "{}", (&lhs - &rhs).norm());
    }

    #[test]
    fn split_derivations_round_trip(seed in any::<u64>(), r in 1usize..=3, degree in 0usize..=2) {
        let mut rng = common::rng(seed);
        let xi: Vec<f64> = (0..=degree).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = random_poly_matrix(&mut rng, r, degree);
        let data = DerivationData::from_parts(&xi, &a);
        let split = split_derivation(&data).unwrap();
        for (k, want) in xi.iter().enumerate() {
            prop_assert!((split.xi.get(k).copied().unwrap_or(0.0) - want).abs() < 1e-10);
        }
        for k in 0..split.inner.degree_bound() {
            prop_assert!(split.inner.coeff(k).trace().norm() < 1e-10);
        }
        for _ in 0..4 {
            let section = random_poly_matrix(&mut rng, r, 2);
            let want = data.apply(&section);
            let got = split.apply(&section);
            let err = (0..want.degree_bound().max(got.degree_bound()))
                .map(|k| (want.coeff(k) - got.coeff(k)).norm())
                .fold(0.0, f64::max);
            prop_assert!(err < 1e-10 * want.norm().max(1.0), "{}", err);
        }
    }
}
