//! One-parameter deformation families `t ↦ MatrixCurveMap`.

use serde::{Deserialize, Serialize};

use super::{CurveBase, Entry, MatrixCurveMap, MatrixFunction, WvError};
use crate::linalg::DEFAULT_TOL;
use crate::point::Smoothness;

/// Family whose entries are polynomials in `(x, t)`:
/// `entries[axis][i*r + j][a][b]` multiplies `x^a t^b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub name: String,
    pub t_range: (f64, f64),
    pub base: CurveBase,
    pub r: usize,
    pub k: Smoothness,
    pub tol: f64,
    pub entries: Vec<Vec<Vec<Vec<f64>>>>,
}

pub const BUILTIN_FAMILIES: [&str; 4] = ["7.2.2-phi1", "7.2.2-phi2", "7.2.2-phi3", "7.2.2-phi4"];

pub fn evaluate_family(spec: &FamilySpec, t: f64) -> Result<MatrixCurveMap, WvError> {
    let (lo, hi) = spec.t_range;
    if !(t >= lo && t <= hi) {
        return Err(WvError::OutOfRange { t, lo, hi });
    }
    let r = spec.r;
    let ms = spec
        .entries
        .iter()
        .enumerate()
        .map(|(axis, entries)| {
            if entries.len() != r * r {
                return Err(WvError::InvalidMap(format!("family matrix {axis} is not {r}x{r}")));
            }
            let entries = entries
                .iter()
                .map(|table| {
                    Entry::Poly(table.iter().map(|row| row.iter().rev().fold(0.0, |acc, &c| acc * t + c)).collect())
                })
                .collect();
            Ok(MatrixFunction { r, entries })
        })
        .collect::<Result<Vec<_>, _>>()?;
    MatrixCurveMap::new(spec.base, ms, spec.k, spec.tol)
}

/// `x`-and-`t` monomial table holding a single coefficient.
fn mono(a: usize, b: usize) -> Vec<Vec<f64>> {
    let mut table = vec![vec![0.0; b + 1]; a + 1];
    table[a][b] = 1.0;
    table
}

fn neg(mut table: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    table.iter_mut().flatten().for_each(|c| *c = -*c);
    table
}

/// The four deformations of the three-line configuration: `y¹ = x·Id` and
/// `y²` lower bidiagonal with diagonal `(−tx, t, tx)` and subdiagonal entries
/// `t` or `1` by family.
pub fn builtin_family(name: &str) -> Result<FamilySpec, WvError> {
    let name = name.strip_prefix("example-").unwrap_or(name);
    let (first, second) = match name {
        "7.2.2-phi1" => (mono(0, 1), mono(0, 1)),
        "7.2.2-phi2" => (mono(0, 1), mono(0, 0)),
        "7.2.2-phi3" => (mono(0, 0), mono(0, 1)),
        "7.2.2-phi4" => (mono(0, 0), mono(0, 0)),
        other => return Err(WvError::Unknown(other.to_string())),
    };
    let zero: Vec<Vec<f64>> = Vec::new();
    let x = mono(1, 0);
    let y1 = vec![
        x.clone(), zero.clone(), zero.clone(),
        zero.clone(), x.clone(), zero.clone(),
        zero.clone(), zero.clone(), x,
    ];
    let y2 = vec![
        neg(mono(1, 1)), zero.clone(), zero.clone(),
        first, mono(0, 1), zero.clone(),
        zero.clone(), second, mono(1, 1),
    ];
    Ok(FamilySpec {
        name: name.to_string(),
        t_range: (0.0, 1.0),
        base: CurveBase::interval(-2.0, 2.0),
        r: 3,
        k: Smoothness::Infinite,
        tol: DEFAULT_TOL,
        entries: vec![y1, y2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::real_matrix;

    fn y2(name: &str, t: f64, x: f64) -> crate::linalg::ComplexMatrix {
        let map = evaluate_family(&builtin_family(name).unwrap(), t).unwrap();
        map.fiber(x).swap_remove(1)
    }

    #[test]
    fn phi1_at_one_is_the_three_lines() {
        let m = y2("7.2.2-phi1", 1.0, 1.5);
        assert_eq!(m, real_matrix(3, 3, &[-1.5, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.5]));
        let map = evaluate_family(&builtin_family("7.2.2-phi1").unwrap(), 1.0).unwrap();
        assert_eq!(map.fiber(1.5)[0], real_matrix(3, 3, &[1.5, 0.0, 0.0, 0.0, 1.5, 0.0, 0.0, 0.0, 1.5]));
    }

    #[test]
    fn limits_at_zero() {
        assert_eq!(y2("7.2.2-phi1", 0.0, 0.7), real_matrix(3, 3, &[0.0; 9]));
        let shift = real_matrix(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(y2("7.2.2-phi4", 0.0, -0.3), shift);
        assert_eq!(y2("example-7.2.2-phi2", 0.0, 0.2)[(2, 1)].re, 1.0);
        assert_eq!(y2("7.2.2-phi3", 0.0, 0.2)[(1, 0)].re, 1.0);
    }

    #[test]
    fn range_is_enforced() {
        let spec = builtin_family("7.2.2-phi3").unwrap();
        assert!(matches!(evaluate_family(&spec, 1.5), Err(WvError::OutOfRange { .. })));
        assert!(matches!(evaluate_family(&spec, f64::NAN), Err(WvError::OutOfRange { .. })));
        assert!(matches!(builtin_family("phi9"), Err(WvError::Unknown(_))));
    }
}
