//! Characteristic polynomials `det(y·I − m^i(x))` as bivariate polynomials.

use std::collections::HashMap;
use std::fmt;

use num::complex::Complex64;
use serde::Serialize;

use super::{MatrixCurveMap, WvError};
use crate::jet::MPoly;
use crate::linalg::{identity, ComplexMatrix};

/// `p(x, y)` with variable 0 the base coordinate and variable 1 the target
/// coordinate `y^{axis+1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharPoly {
    pub axis: usize,
    #[serde(serialize_with = "as_text")]
    pub poly: MPoly,
}

fn as_text<S: serde::Serializer>(p: &MPoly, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&render(p))
}

/// Leading powers of `y` first.
fn render(p: &MPoly) -> String {
    let swapped = MPoly::from_terms(2, p.terms().map(|(e, c)| (vec![e[1], e[0]], c)));
    swapped.display_with(&["y", "x"])
}

impl CharPoly {
    pub fn degree_in_y(&self) -> u32 {
        self.poly.terms().map(|(e, _)| e[1]).max().unwrap_or(0)
    }

    /// `c_k(x)` as ascending coefficient vectors, indexed by the power of `y`.
    pub fn y_coefficients(&self) -> Vec<Vec<f64>> {
        let dy = self.degree_in_y() as usize;
        let mut out = vec![Vec::new(); dy + 1];
        for (e, c) in self.poly.terms() {
            let slot = &mut out[e[1] as usize];
            let i = e[0] as usize;
            if slot.len() <= i {
                slot.resize(i + 1, 0.0);
            }
            slot[i] += c;
        }
        out
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.poly.eval(&[x, y])
    }

    /// `p(x, m)` with the matrix substituted for `y` (Horner form).
    pub fn eval_matrix(&self, x: f64, m: &ComplexMatrix) -> ComplexMatrix {
        let r = m.nrows();
        let coeffs: Vec<f64> = self.y_coefficients().iter().map(|c| super::poly_eval(c, x)).collect();
        let mut acc = ComplexMatrix::zeros(r, r);
        for &c in coeffs.iter().rev() {
            acc = &acc * m + identity(r) * Complex64::new(c, 0.0);
        }
        acc
    }

    /// Roots in `y` at fixed `x`, from the companion matrix.
    pub fn roots_at(&self, x: f64) -> Vec<Complex64> {
        let coeffs: Vec<f64> = self.y_coefficients().iter().map(|c| super::poly_eval(c, x)).collect();
        let d = coeffs.len() - 1;
        if d == 0 {
            return Vec::new();
        }
        let lead = coeffs[d];
        let mut comp = ComplexMatrix::zeros(d, d);
        for i in 1..d {
            comp[(i, i - 1)] = Complex64::new(1.0, 0.0);
        }
        for i in 0..d {
            comp[(i, d - 1)] = Complex64::new(-coeffs[i] / lead, 0.0);
        }
        comp.eigenvalues().map(|v| v.iter().copied().collect()).unwrap_or_else(|| {
            comp.schur().eigenvalues().map(|v| v.iter().copied().collect()).unwrap_or_default()
        })
    }
}

impl fmt::Display for CharPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", render(&self.poly))
    }
}

fn entry_poly(coeffs: &[f64]) -> MPoly {
    MPoly::from_terms(2, coeffs.iter().enumerate().map(|(i, &c)| (vec![i as u32, 0], c)))
}

/// Division-free Laplace expansion along rows, memoized on the set of
/// columns still available.
fn determinant(a: &[Vec<MPoly>]) -> MPoly {
    fn rec(a: &[Vec<MPoly>], mask: u32, memo: &mut HashMap<u32, MPoly>) -> MPoly {
        let r = a.len();
        let row = r - mask.count_ones() as usize;
        if row == r {
            return MPoly::constant(2, 1.0);
        }
        if let Some(p) = memo.get(&mask) {
            return p.clone();
        }
        let mut acc = MPoly::zero(2);
        let mut position = 0;
        for j in 0..r {
            if mask & (1 << j) == 0 {
                continue;
            }
            if !a[row][j].is_zero() {
                let minor = rec(a, mask & !(1 << j), memo);
                let term = &a[row][j] * &minor;
                acc = if position % 2 == 0 { &acc + &term } else { &acc - &term };
            }
            position += 1;
        }
        memo.insert(mask, acc.clone());
        acc
    }
    let full = if a.len() == 32 { u32::MAX } else { (1u32 << a.len()) - 1 };
    rec(a, full, &mut HashMap::new())
}

pub fn characteristic_polynomials(map: &MatrixCurveMap) -> Result<Vec<CharPoly>, WvError> {
    if map.r > 24 {
        return Err(WvError::InvalidMap(format!("rank {} too large for symbolic determinant", map.r)));
    }
    let r = map.r;
    let y = MPoly::var(2, 1);
    map.ms
        .iter()
        .enumerate()
        .map(|(axis, m)| {
            let mut a = vec![vec![MPoly::zero(2); r]; r];
            for (i, row) in a.iter_mut().enumerate() {
                for (j, slot) in row.iter_mut().enumerate() {
                    let c = m.entry(i, j).as_poly().ok_or(WvError::NotPolynomial)?;
                    let neg = entry_poly(c).scale(-1.0);
                    *slot = if i == j { &y + &neg } else { neg };
                }
            }
            Ok(CharPoly { axis, poly: determinant(&a) })
        })
        .collect()
}
