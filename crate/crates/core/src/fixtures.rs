//! Built-in example maps, addressable by name from tests and the CLI.

use num::complex::Complex64;

use crate::linalg::{real_matrix, ComplexMatrix, DEFAULT_TOL};
use crate::point::{AzumayaPointMap, PointError, Smoothness};
use crate::worldvolume::{
    builtin_family, evaluate_family, from_branched_cover, CoverBase, CurveBase, Entry,
    MatrixCurveMap, MatrixFunction, WvError,
};

pub const POINT_FIXTURES: [&str; 2] = ["example-3.1.1", "rotation"];

pub const CURVE_FIXTURES: [&str; 8] = [
    "example-5.2.6.a",
    "example-5.2.6.b",
    "example-5.2.6.c",
    "example-7.2.2-phi1",
    "example-7.2.2-phi2",
    "example-7.2.2-phi3",
    "example-7.2.2-phi4",
    "double-cover",
];

/// Generic cubics for the three-string example: the second and third
/// strings meet the first at `x = 1/4` and `x = -1/2` respectively and
/// never meet each other on `[-1, 1]`.
pub fn three_string_cubics() -> [(Vec<f64>, Vec<f64>); 3] {
    let f1 = vec![0.0, -0.5, 0.0, 1.0];
    let g1 = vec![-0.2, 0.0, 1.0, 0.3];
    // (x - 1/4)(0.7 + 0.4x), (x - 1/4)(-0.6 + 0.3x^2)
    let df2 = [-0.175, 0.6, 0.4, 0.0];
    let dg2 = [0.15, -0.6, -0.075, 0.3];
    // (x + 1/2)(-0.8 + 0.2x), (x + 1/2)(0.9 - 0.5x)
    let df3 = [-0.4, -0.7, 0.2, 0.0];
    let dg3 = [0.45, 0.65, -0.5, 0.0];
    let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p + q).collect::<Vec<f64>>();
    [
        (f1.clone(), g1.clone()),
        (add(&f1, &df2), add(&g1, &dg2)),
        (add(&f1, &df3), add(&g1, &dg3)),
    ]
}

pub fn point_fixture(name: &str) -> Result<AzumayaPointMap, WvError> {
    let ms: Vec<ComplexMatrix> = match name {
        // J_2(1) ⊕ J_1(1) ⊕ J_2(-1/2), lower-triangular Jordan blocks.
        "example-3.1.1" => vec![real_matrix(
            5,
            5,
            &[
                1.0, 0.0, 0.0, 0.0, 0.0, //
                1.0, 1.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, -0.5, 0.0, //
                0.0, 0.0, 0.0, 1.0, -0.5,
            ],
        )],
        "rotation" => vec![real_matrix(2, 2, &[0.0, -1.0, 1.0, 0.0])],
        other => return Err(WvError::Unknown(other.to_string())),
    };
    AzumayaPointMap::new(ms, Smoothness::Infinite, DEFAULT_TOL).map_err(|e| WvError::InvalidMap(e.to_string()))
}

/// One joint block of a constructed point map.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    /// Joint eigenvalue, one coordinate per axis.
    pub point: Vec<f64>,
    /// Jordan type of the nilpotent generator `N` (lower shifts).
    pub jordan: Vec<usize>,
    /// Per axis, coefficients of `N, N², …` in the nilpotent part.
    pub nilpotent: Vec<Vec<f64>>,
}

impl BlockSpec {
    pub fn size(&self) -> usize {
        self.jordan.iter().sum()
    }

    fn generator(&self) -> ComplexMatrix {
        let k = self.size();
        let mut n = ComplexMatrix::zeros(k, k);
        let mut start = 0;
        for &len in &self.jordan {
            for i in 1..len {
                n[(start + i, start + i - 1)] = Complex64::new(1.0, 0.0);
            }
            start += len;
        }
        n
    }
}

/// `P · blockdiag(λ_l Id + Σ_k c_k N_l^k) · P⁻¹` on every axis: commuting by
/// construction, with real joint spectrum `{λ_l}`.
pub fn commuting_point_map(
    blocks: &[BlockSpec],
    conjugator: Option<&ComplexMatrix>,
    k: Smoothness,
    tol: f64,
) -> Result<AzumayaPointMap, PointError> {
    let r: usize = blocks.iter().map(BlockSpec::size).sum();
    let n = blocks.first().map_or(0, |b| b.point.len());
    let mut ms = vec![ComplexMatrix::zeros(r, r); n];
    let mut start = 0;
    for b in blocks {
        let size = b.size();
        let nil = b.generator();
        for (axis, m) in ms.iter_mut().enumerate() {
            let mut block = ComplexMatrix::identity(size, size) * Complex64::new(b.point[axis], 0.0);
            let mut power = nil.clone();
            for &c in b.nilpotent.get(axis).map_or(&[][..], Vec::as_slice) {
                block += &power * Complex64::new(c, 0.0);
                power = &power * &nil;
            }
            m.view_mut((start, start), (size, size)).copy_from(&block);
        }
        start += size;
    }
    if let Some(p) = conjugator {
        let inv = p.clone().try_inverse().ok_or(PointError::Linalg(crate::linalg::LinalgError::SingularBasis {
            condition: f64::INFINITY,
        }))?;
        ms = ms.into_iter().map(|m| p * m * &inv).collect();
    }
    AzumayaPointMap::new(ms, k, tol)
}

fn diagonal(r: usize, diag: &[Vec<f64>]) -> MatrixFunction {
    let mut m = MatrixFunction::zero(r);
    for (i, d) in diag.iter().enumerate() {
        m.entries[i * r + i] = Entry::Poly(d.clone());
    }
    m
}

fn curve(base: CurveBase, ms: Vec<MatrixFunction>) -> Result<MatrixCurveMap, WvError> {
    MatrixCurveMap::new(base, ms, Smoothness::Infinite, DEFAULT_TOL)
}

/// Curve fixture at the default parameter (`t = 1` for the families).
pub fn curve_fixture(name: &str) -> Result<MatrixCurveMap, WvError> {
    curve_fixture_at(name, None)
}

pub fn curve_fixture_at(name: &str, t: Option<f64>) -> Result<MatrixCurveMap, WvError> {
    let unit = CurveBase::interval(-1.0, 1.0);
    match name {
        "example-5.2.6.a" => {
            let [a, b, c] = three_string_cubics();
            curve(
                unit,
                vec![diagonal(3, &[a.0, b.0, c.0]), diagonal(3, &[a.1, b.1, c.1])],
            )
        }
        "example-5.2.6.b" => {
            let [a, b, _] = three_string_cubics();
            let mut y1 = diagonal(3, &[a.0, b.0.clone(), b.0]);
            y1.entries[2 * 3 + 1] = Entry::constant(1.0);
            curve(unit, vec![y1, diagonal(3, &[a.1, b.1.clone(), b.1])])
        }
        "example-5.2.6.c" => {
            let f = vec![0.0, -1.0, 0.0, 1.0];
            let g = vec![-0.5, 0.0, 1.0];
            let mut y1 = diagonal(3, &[f.clone(), f.clone(), f]);
            y1.entries[3] = Entry::constant(1.0);
            y1.entries[7] = Entry::constant(1.0);
            curve(unit, vec![y1, diagonal(3, &[g.clone(), g.clone(), g])])
        }
        "double-cover" => {
            let w = vec![vec![0.0, 1.0]];
            from_branched_cover(&[w.clone(), w], &[1, 0], CoverBase::Circle { radius: 1.0 }, 1)
        }
        other => {
            let family = other.strip_prefix("example-").unwrap_or(other);
            let spec = builtin_family(family).map_err(|_| WvError::Unknown(other.to_string()))?;
            evaluate_family(&spec, t.unwrap_or(1.0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldvolume::poly_eval;

    #[test]
    fn cubics_meet_where_intended() {
        let [a, b, c] = three_string_cubics();
        let meet = |p: &(Vec<f64>, Vec<f64>), q: &(Vec<f64>, Vec<f64>), x: f64| {
            (poly_eval(&p.0, x) - poly_eval(&q.0, x)).abs() + (poly_eval(&p.1, x) - poly_eval(&q.1, x)).abs()
        };
        assert!(meet(&a, &b, 0.25) < 1e-15);
        assert!(meet(&a, &c, -0.5) < 1e-15);
        let closest = (0..=2000).map(|i| meet(&b, &c, -1.0 + i as f64 / 1000.0)).fold(f64::INFINITY, f64::min);
        assert!(closest > 0.01);
    }

    #[test]
    fn constructed_maps_commute() {
        let blocks = [
            BlockSpec { point: vec![1.0, -0.5], jordan: vec![2, 1], nilpotent: vec![vec![1.0], vec![0.5]] },
            BlockSpec { point: vec![-1.0, 2.0], jordan: vec![1], nilpotent: vec![vec![], vec![]] },
        ];
        let p = real_matrix(4, 4, &[1.0, 0.2, 0.0, 0.1, 0.0, 1.0, 0.3, 0.0, 0.1, 0.0, 1.0, 0.2, 0.0, 0.1, 0.0, 1.0]);
        let map = commuting_point_map(&blocks, Some(&p), Smoothness::Infinite, DEFAULT_TOL).unwrap();
        assert!(crate::point::validate(&map).admissible);
        let s = crate::point::support(&map).unwrap();
        assert_eq!(s.lengths, vec![1, 3]);
    }

    #[test]
    fn all_fixtures_build() {
        for name in CURVE_FIXTURES {
            curve_fixture(name).unwrap();
        }
        for name in POINT_FIXTURES {
            point_fixture(name).unwrap();
        }
        assert!(matches!(curve_fixture("nope"), Err(WvError::Unknown(_))));
    }
}
