mod common;

use azumaya_core::forms::{
    check_calibration_vanishing, check_slag, pullback_to_branches, CalibrationInput, PolyForm, SlagConvention,
};
use azumaya_core::worldvolume::{analyze, BranchDiagram, CurveBase, Entry, MatrixCurveMap, MatrixFunction};
use proptest::prelude::*;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

fn curve(base: (f64, f64), y1: Vec<f64>, y2: Vec<f64>) -> BranchDiagram {
    let a = MatrixFunction { r: 1, entries: vec![Entry::Poly(y1)] };
    let b = MatrixFunction { r: 1, entries: vec![Entry::Poly(y2)] };
    let map = MatrixCurveMap::with_default_tol(CurveBase::interval(base.0, base.1), vec![a, b]).unwrap();
    analyze(&map, 65).unwrap()
}

fn random_form(rng: &mut ChaCha8Rng, degree: usize) -> PolyForm {
    let mut f = PolyForm::new(2, degree).unwrap();
    if degree == 2 {
        f.add_term(&[0, 1], common::random_poly(rng, 2, 2)).unwrap();
    } else {
        for i in 0..2 {
            let idx: Vec<usize> = if degree == 1 { vec![i] } else { vec![] };
            f.add_term(&idx, common::random_poly(rng, 2, 2)).unwrap();
        }
    }
    f
}

/// Index triples (1-based) carrying a coefficient in the standard
/// associative 3-form.
const G2_TRIPLES: [[usize; 3]; 7] = [[1, 2, 3], [1, 4, 5], [1, 6, 7], [2, 4, 6], [2, 5, 7], [3, 4, 7], [3, 5, 6]];

#[test]
fn associative_form_vanishes_exactly_off_its_triples() {
    let eta = PolyForm::standard_g2();
    let mut planes = 0;
    for a in 1..=7 {
        for b in a + 1..=7 {
            for c in b + 1..=7 {
                planes += 1;
                let want = !G2_TRIPLES.contains(&[a, b, c]);
                let input = CalibrationInput::coordinate_plane(7, &[a - 1, b - 1, c - 1]);
                let rep = check_calibration_vanishing(&input, &eta, 3).unwrap();
                assert_eq!(rep.pass, want, "plane {a}{b}{c}");
                assert_eq!(rep.residual, if want { 0.0 } else { 1.0 });
            }
        }
    }
    assert_eq!(planes, 35);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pullback_is_linear(seed in any::<u64>(), degree in 0usize..=1) {
        let mut rng = common::rng(seed);
        let y1: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let diag = curve((-1.0, 1.0), y1, vec![0.2, -0.5, 0.3]);
        let (f, g) = (random_form(&mut rng, degree), random_form(&mut rng, degree));
        let s: f64 = rng.random_range(-2.0..2.0);
        let sum = pullback_to_branches(&f.add(&g.scale(s)).unwrap(), &diag).unwrap();
        let (pf, pg) = (pullback_to_branches(&f, &diag).unwrap(), pullback_to_branches(&g, &diag).unwrap());
        for ((a, b), c) in sum.iter().zip(&pf).zip(&pg) {
            for i in 0..a.coefficient.len() {
                let want = b.coefficient[i] + s * c.coefficient[i];
                prop_assert!((a.coefficient[i] - want).abs() < 1e-12 * a.magnitude[i].max(1.0));
            }
        }
    }

    #[test]
    fn two_forms_pull_back_to_zero_on_curves(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let diag = curve((-1.0, 1.0), vec![0.1, 1.0, 0.4], vec![-0.3, 0.2, 0.0, 0.7]);
        let pb = pullback_to_branches(&random_form(&mut rng, 2), &diag).unwrap();
        prop_assert!(pb.iter().all(|p| p.coefficient.iter().all(|&c| c == 0.0)));
    }

    #[test]
    fn lines_are_special_lagrangian_in_any_parametrization(
        a in -2.0f64..2.0, b in -2.0f64..2.0, c in -1.0f64..1.0, e in -1.0f64..1.0,
    ) {
        prop_assume!(a.hypot(b) > 0.05);
        let once = check_slag(&curve((-1.0, 1.0), vec![c, a], vec![e, b]), SlagConvention::Im).unwrap();
        let twice = check_slag(&curve((-0.5, 0.5), vec![c, 2.0 * a], vec![e, 2.0 * b]), SlagConvention::Im).unwrap();
        prop_assert!(once.pass && twice.pass);
        let (p, q) = (once.components[0].phase.unwrap(), twice.components[0].phase.unwrap());
        prop_assert!((p - q).abs() < 1e-9, "{} vs {}", p, q);
    }

    #[test]
    fn curved_strings_are_not_special_lagrangian(k in 0.5f64..3.0, a in -1.0f64..1.0) {
        let rep = check_slag(&curve((-1.0, 1.0), vec![0.0, 1.0], vec![0.0, a, k]), SlagConvention::Im).unwrap();
        prop_assert!(!rep.pass, "{:?}", rep);
    }
}
