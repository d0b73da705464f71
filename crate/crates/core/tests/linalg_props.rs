mod common;

use azumaya_core::linalg::{
    joint_block_decompose, matrix_power, nilpotent_index, spectral_decompose, ComplexMatrix, DEFAULT_TOL,
};
use num::complex::Complex64;
use proptest::prelude::*;

fn sorted_real(values: &[Complex64], mults: &[usize]) -> Vec<f64> {
    let mut out: Vec<f64> = values.iter().zip(mults).flat_map(|(v, &m)| std::iter::repeat_n(v.re, m)).collect();
    out.sort_by(f64::total_cmp);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decomposition_is_block_diagonal(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let s = common::random_point_map(&mut rng, 5, 3, azumaya_core::point::Smoothness::Infinite);
        let ms = s.map.matrices().to_vec();
        let bd = joint_block_decompose(&ms, DEFAULT_TOL).unwrap();
        prop_assert_eq!(bd.block_sizes.iter().sum::<usize>(), s.map.rank());
        prop_assert!(bd.off_block_residual(&ms) < 10.0 * DEFAULT_TOL * bd.scale());
        prop_assert_eq!(bd.len(), s.blocks.len());
    }

    #[test]
    fn nilpotent_index_is_sharp(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let s = common::random_point_map(&mut rng, 5, 2, azumaya_core::point::Smoothness::Infinite);
        let bd = joint_block_decompose(s.map.matrices(), DEFAULT_TOL).unwrap();
        for l in 0..bd.len() {
            for (axis, n) in bd.nilpotent_parts(l).into_iter().enumerate() {
                let scale = bd.scales[axis];
                let p = nilpotent_index(&n, scale, DEFAULT_TOL);
                prop_assert!(matrix_power(&n, p).norm() <= DEFAULT_TOL * scale.powi(p as i32));
                if p > 1 {
                    prop_assert!(matrix_power(&n, p - 1).norm() > DEFAULT_TOL * scale.powi(p as i32 - 1));
                }
            }
        }
    }

    #[test]
    fn spectrum_is_conjugation_covariant(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let s = common::random_point_map(&mut rng, 5, 1, azumaya_core::point::Smoothness::Infinite);
        let m = &s.map.matrices()[0];
        let p = common::random_conjugator(&mut rng, s.map.rank());
        let conj: ComplexMatrix = &p * m * p.clone().try_inverse().unwrap();
        let a = spectral_decompose(m, DEFAULT_TOL).unwrap();
        let b = spectral_decompose(&conj, DEFAULT_TOL).unwrap();
        let (ea, eb) = (sorted_real(&a.eigenvalues, &a.multiplicities), sorted_real(&b.eigenvalues, &b.multiplicities));
        prop_assert_eq!(ea.len(), eb.len());
        for (x, y) in ea.iter().zip(&eb) {
            prop_assert!((x - y).abs() < 100.0 * DEFAULT_TOL, "{} vs {}", x, y);
        }
    }
}
