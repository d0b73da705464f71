//! Differential calculus on the matrix algebra `M_r(C)` with exact
//! Gaussian-rational coefficients.
//!
//! Forms are finite sums of `m_0 dm_1 ∧ … ∧ dm_l`, kept in that left-normal
//! shape. A form is evaluated on inner derivations `Θ_a` through
//! `dm(Θ_a) = [m, a]` and the antisymmetrized ordered product; two forms are
//! equal when they agree on every increasing tuple of an `sl_r` basis.

use std::fmt;

use nalgebra::DMatrix;
use num::complex::{Complex, Complex64};
use num::{BigInt, BigRational, FromPrimitive, Signed, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::linalg::ComplexMatrix;
use crate::point::{evaluate, AzumayaPointMap, PointError};
use crate::jet::FnSpec;

/// Exact Gaussian rational.
pub type Scalar = Complex<BigRational>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DgaError {
    #[error("form of degree {found} where degree {expected} is required")]
    DegreeMismatch { expected: usize, found: usize },
    #[error("matrix size {found} does not match rank {expected}")]
    RankMismatch { expected: usize, found: usize },
    #[error("action is not a derivation: splitting residual {residual:.3e}")]
    NotADerivation { residual: f64 },
    #[error("non-finite or non-representable entry")]
    NonFinite,
}

fn q(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

fn zero_scalar() -> Scalar {
    Complex::new(BigRational::zero(), BigRational::zero())
}

fn scalar_is_zero(s: &Scalar) -> bool {
    s.re.is_zero() && s.im.is_zero()
}

// ---------------------------------------------------------------------------
// Exact matrices

/// Square matrix over the Gaussian rationals, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct QMatrix {
    r: usize,
    data: Vec<Scalar>,
}

impl fmt::Debug for QMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for QMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for i in 0..self.r {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.r {
                if j > 0 {
                    write!(f, ", ")?;
                }
                let z = &self.data[i * self.r + j];
                if z.im.is_zero() {
                    write!(f, "{}", z.re)?;
                } else {
                    write!(f, "{}{}{}i", z.re, if z.im.is_negative() { "" } else { "+" }, z.im)?;
                }
            }
        }
        write!(f, "]")
    }
}

impl QMatrix {
    pub fn zero(r: usize) -> Self {
        QMatrix { r, data: vec![zero_scalar(); r * r] }
    }

    pub fn identity(r: usize) -> Self {
        let mut m = Self::zero(r);
        for i in 0..r {
            m.data[i * r + i] = Complex::new(q(1), q(0));
        }
        m
    }

    /// Matrix unit `E_{ij}` (row `i`, column `j`, zero-based).
    pub fn unit(r: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zero(r);
        m.data[i * r + j] = Complex::new(q(1), q(0));
        m
    }

    pub fn from_integers(r: usize, values: &[i64]) -> Self {
        assert_eq!(values.len(), r * r, "row-major data length");
        QMatrix { r, data: values.iter().map(|&v| Complex::new(q(v), q(0))).collect() }
    }

    pub fn from_entries(r: usize, data: Vec<Scalar>) -> Self {
        assert_eq!(data.len(), r * r, "row-major data length");
        QMatrix { r, data }
    }

    /// Exact binary value of each floating-point entry.
    pub fn from_complex(m: &ComplexMatrix) -> Result<Self, DgaError> {
        let r = m.nrows();
        if m.ncols() != r {
            return Err(DgaError::RankMismatch { expected: r, found: m.ncols() });
        }
        let mut data = Vec::with_capacity(r * r);
        for i in 0..r {
            for j in 0..r {
                let z = m[(i, j)];
                let re = BigRational::from_f64(z.re).ok_or(DgaError::NonFinite)?;
                let im = BigRational::from_f64(z.im).ok_or(DgaError::NonFinite)?;
                data.push(Complex::new(re, im));
            }
        }
        Ok(QMatrix { r, data })
    }

    pub fn to_complex(&self) -> ComplexMatrix {
        DMatrix::from_fn(self.r, self.r, |i, j| {
            let z = &self.data[i * self.r + j];
            Complex64::new(z.re.to_f64().unwrap_or(f64::NAN), z.im.to_f64().unwrap_or(f64::NAN))
        })
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn get(&self, i: usize, j: usize) -> &Scalar {
        &self.data[i * self.r + j]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(scalar_is_zero)
    }

    /// Scalar multiple of the identity.
    pub fn is_central(&self) -> bool {
        let d = &self.data[0];
        (0..self.r).all(|i| {
            (0..self.r).all(|j| {
                let z = &self.data[i * self.r + j];
                if i == j {
                    z == d
                } else {
                    scalar_is_zero(z)
                }
            })
        })
    }

    pub fn trace(&self) -> Scalar {
        let mut t = zero_scalar();
        for i in 0..self.r {
            t = t + self.data[i * self.r + i].clone();
        }
        t
    }

    pub fn scale(&self, s: &Scalar) -> Self {
        QMatrix { r: self.r, data: self.data.iter().map(|z| z * s).collect() }
    }

    /// Subtracts `(tr / r)·I`.
    pub fn trace_free(&self) -> Self {
        let shift = self.trace() / Complex::new(q(self.r as i64), q(0));
        let mut out = self.clone();
        for i in 0..self.r {
            out.data[i * self.r + i] = out.data[i * self.r + i].clone() - shift.clone();
        }
        out
    }

    pub fn mul(&self, other: &QMatrix) -> QMatrix {
        let r = self.r;
        let mut out = Self::zero(r);
        for i in 0..r {
            for k in 0..r {
                let a = &self.data[i * r + k];
                if scalar_is_zero(a) {
                    continue;
                }
                for j in 0..r {
                    let b = &other.data[k * r + j];
                    if !scalar_is_zero(b) {
                        out.data[i * r + j] = &out.data[i * r + j] + a * b;
                    }
                }
            }
        }
        out
    }

    pub fn add(&self, other: &QMatrix) -> QMatrix {
        QMatrix { r: self.r, data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, other: &QMatrix) -> QMatrix {
        QMatrix { r: self.r, data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() }
    }

    pub fn neg(&self) -> QMatrix {
        QMatrix { r: self.r, data: self.data.iter().map(|a| -a.clone()).collect() }
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &QMatrix) -> QMatrix {
        self.mul(other).sub(&other.mul(self))
    }
}

/// Basis of `sl_r`: off-diagonal units, then `E_ii - E_{i+1,i+1}`.
pub fn sl_basis(r: usize) -> Vec<QMatrix> {
    let mut out = Vec::new();
    for i in 0..r {
        for j in 0..r {
            if i != j {
                out.push(QMatrix::unit(r, i, j));
            }
        }
    }
    for i in 0..r.saturating_sub(1) {
        out.push(QMatrix::unit(r, i, i).sub(&QMatrix::unit(r, i + 1, i + 1)));
    }
    out
}

/// Rank over `Q(i)` by exact Gaussian elimination; `rows` are row vectors.
pub fn exact_rank(mut rows: Vec<Vec<Scalar>>) -> usize {
    let ncols = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    for col in 0..ncols {
        let Some(pivot) = (rank..rows.len()).find(|&i| !scalar_is_zero(&rows[i][col])) else {
            continue;
        };
        rows.swap(rank, pivot);
        let inv = Complex::new(q(1), q(0)) / rows[rank][col].clone();
        let pivot_row: Vec<Scalar> = rows[rank].iter().map(|z| z * &inv).collect();
        for (i, row) in rows.iter_mut().enumerate() {
            if i != rank && !scalar_is_zero(&row[col]) {
                let factor = row[col].clone();
                for (z, p) in row.iter_mut().zip(&pivot_row) {
                    *z = &*z - &factor * p;
                }
            }
        }
        rows[rank] = pivot_row;
        rank += 1;
    }
    rank
}

/// Rank of `a ↦ ad(a)` on `M_r`, i.e. the dimension of the derivation space.
pub fn ad_rank(r: usize) -> usize {
    // one row per generator E_ij: the flattened images [E_ij, E_kl]
    let mut rows = Vec::with_capacity(r * r);
    for i in 0..r {
        for j in 0..r {
            let a = QMatrix::unit(r, i, j);
            let mut row = Vec::with_capacity(r.pow(4));
            for k in 0..r {
                for l in 0..r {
                    row.extend(a.commutator(&QMatrix::unit(r, k, l)).data);
                }
            }
            rows.push(row);
        }
    }
    exact_rank(rows)
}

// ---------------------------------------------------------------------------
// Derivations

/// Inner derivation `b ↦ [a, b]` with trace-free generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    generator: QMatrix,
}

pub fn inner_derivation(a: &QMatrix) -> Derivation {
    Derivation { generator: a.trace_free() }
}

impl Derivation {
    pub fn generator(&self) -> &QMatrix {
        &self.generator
    }

    pub fn is_zero(&self) -> bool {
        self.generator.is_zero()
    }

    pub fn apply(&self, b: &QMatrix) -> QMatrix {
        self.generator.commutator(b)
    }

    pub fn apply_float(&self, b: &ComplexMatrix) -> ComplexMatrix {
        let a = self.generator.to_complex();
        &a * b - b * &a
    }
}

// ---------------------------------------------------------------------------
// Forms

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: QMatrix,
    pub gens: Vec<QMatrix>,
}

/// Element of degree `degree` of the differential graded algebra.
#[derive(Debug, Clone, PartialEq)]
pub struct DgaElement {
    r: usize,
    degree: usize,
    terms: Vec<Term>,
}

impl DgaElement {
    pub fn zero(r: usize, degree: usize) -> Self {
        DgaElement { r, degree, terms: Vec::new() }
    }

    /// The 0-form `m`.
    pub fn function(m: QMatrix) -> Self {
        DgaElement { r: m.rank(), degree: 0, terms: vec![Term { coeff: m, gens: Vec::new() }] }
    }

    /// `m_0 dm_1 ∧ … ∧ dm_l`.
    pub fn monomial(coeff: QMatrix, gens: Vec<QMatrix>) -> Self {
        let r = coeff.rank();
        assert!(gens.iter().all(|g| g.rank() == r), "generator rank");
        DgaElement { r, degree: gens.len(), terms: vec![Term { coeff, gens }] }
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn add(&self, other: &DgaElement) -> Result<DgaElement, DgaError> {
        self.check_compatible(other)?;
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(DgaElement { r: self.r, degree: self.degree, terms })
    }

    pub fn neg(&self) -> DgaElement {
        self.scale(&Complex::new(q(-1), q(0)))
    }

    pub fn sub(&self, other: &DgaElement) -> Result<DgaElement, DgaError> {
        self.add(&other.neg())
    }

    pub fn scale(&self, s: &Scalar) -> DgaElement {
        let terms = self
            .terms
            .iter()
            .map(|t| Term { coeff: t.coeff.scale(s), gens: t.gens.clone() })
            .collect();
        DgaElement { r: self.r, degree: self.degree, terms }
    }

    fn check_compatible(&self, other: &DgaElement) -> Result<(), DgaError> {
        if self.r != other.r {
            return Err(DgaError::RankMismatch { expected: self.r, found: other.r });
        }
        if self.degree != other.degree {
            return Err(DgaError::DegreeMismatch { expected: self.degree, found: other.degree });
        }
        Ok(())
    }

    /// Drops terms that vanish structurally: zero coefficient or a central
    /// generator (`d` of a scalar matrix is 0).
    pub fn simplify(&self) -> DgaElement {
        let terms = self
            .terms
            .iter()
            .filter(|t| !t.coeff.is_zero() && !t.gens.iter().any(QMatrix::is_central))
            .cloned()
            .collect();
        DgaElement { r: self.r, degree: self.degree, terms }
    }

    /// Value on the derivations `Θ_{a_1}, …, Θ_{a_l}`.
    pub fn evaluate(&self, args: &[Derivation]) -> Result<QMatrix, DgaError> {
        if args.len() != self.degree {
            return Err(DgaError::DegreeMismatch { expected: self.degree, found: args.len() });
        }
        let gens: Vec<QMatrix> = args.iter().map(|d| d.generator.clone()).collect();
        let full = (1usize << args.len()) - 1;
        Ok(self.subset_values(&gens).swap_remove(full).unwrap_or_else(|| QMatrix::zero(self.r)))
    }

    /// Values on every increasing `l`-tuple drawn from `basis`, indexed by
    /// bitmask. Entries not of popcount `l` are `None`.
    fn subset_values(&self, basis: &[QMatrix]) -> Vec<Option<QMatrix>> {
        let b = basis.len();
        let l = self.degree;
        let mut total: Vec<Option<QMatrix>> = vec![None; 1 << b];
        if l > b {
            return total;
        }
        for term in &self.terms {
            // commutator table [m_j, a_k]
            let table: Vec<Vec<QMatrix>> =
                term.gens.iter().map(|m| basis.iter().map(|a| m.commutator(a)).collect()).collect();
            let mut level: Vec<(usize, QMatrix)> = vec![(0, term.coeff.clone())];
            for row in &table {
                let mut next: std::collections::BTreeMap<usize, QMatrix> = Default::default();
                for (mask, value) in &level {
                    for (k, factor) in row.iter().enumerate() {
                        if mask & (1 << k) != 0 || factor.is_zero() {
                            continue;
                        }
                        let above = (mask >> (k + 1)).count_ones();
                        let mut contrib = value.mul(factor);
                        if above % 2 == 1 {
                            contrib = contrib.neg();
                        }
                        let key = mask | (1 << k);
                        match next.get_mut(&key) {
                            Some(v) => *v = v.add(&contrib),
                            None => {
                                next.insert(key, contrib);
                            }
                        }
                    }
                }
                level = next.into_iter().filter(|(_, v)| !v.is_zero()).collect();
                if level.is_empty() {
                    break;
                }
            }
            for (mask, value) in level {
                if mask.count_ones() as usize != l {
                    continue;
                }
                total[mask] = Some(match total[mask].take() {
                    Some(v) => v.add(&value),
                    None => value,
                });
            }
        }
        total
    }

    /// Zero test by evaluation on all increasing tuples of an `sl_r` basis.
    pub fn is_zero(&self) -> bool {
        if self.degree == 0 {
            return self.terms.iter().fold(QMatrix::zero(self.r), |acc, t| acc.add(&t.coeff)).is_zero();
        }
        self.subset_values(&sl_basis(self.r)).iter().flatten().all(QMatrix::is_zero)
    }

    pub fn equals(&self, other: &DgaElement) -> Result<bool, DgaError> {
        Ok(self.sub(other)?.is_zero())
    }
}

/// `d(m_0 dm_1 … dm_l) = dm_0 ∧ dm_1 ∧ … ∧ dm_l`.
pub fn dga_d(omega: &DgaElement) -> DgaElement {
    let r = omega.r;
    let terms = omega
        .terms
        .iter()
        .map(|t| {
            let mut gens = Vec::with_capacity(t.gens.len() + 1);
            gens.push(t.coeff.clone());
            gens.extend(t.gens.iter().cloned());
            Term { coeff: QMatrix::identity(r), gens }
        })
        .collect();
    DgaElement { r, degree: omega.degree + 1, terms }
}

/// `(m_0 dm_1 … dm_l)·s` rewritten in left-normal form using
/// `dm·s = d(ms) - m·ds`.
fn right_multiply(coeff: &QMatrix, gens: &[QMatrix], s: &QMatrix) -> Vec<Term> {
    match gens.split_last() {
        None => vec![Term { coeff: coeff.mul(s), gens: Vec::new() }],
        Some((last, init)) => {
            let mut first = init.to_vec();
            first.push(last.mul(s));
            let mut out = vec![Term { coeff: coeff.clone(), gens: first }];
            for mut t in right_multiply(coeff, init, last) {
                t.coeff = t.coeff.neg();
                t.gens.push(s.clone());
                out.push(t);
            }
            out
        }
    }
}

pub fn dga_wedge(alpha: &DgaElement, beta: &DgaElement) -> Result<DgaElement, DgaError> {
    if alpha.r != beta.r {
        return Err(DgaError::RankMismatch { expected: alpha.r, found: beta.r });
    }
    let mut terms = Vec::new();
    for a in &alpha.terms {
        for b in &beta.terms {
            for mut t in right_multiply(&a.coeff, &a.gens, &b.coeff) {
                t.gens.extend(b.gens.iter().cloned());
                terms.push(t);
            }
        }
    }
    Ok(DgaElement { r: alpha.r, degree: alpha.degree + beta.degree, terms })
}

/// `Σ m_0·[m_1, a]` for a 1-form and the derivation `Θ_a`.
pub fn pair(theta: &Derivation, alpha: &DgaElement) -> Result<QMatrix, DgaError> {
    if alpha.degree != 1 {
        return Err(DgaError::DegreeMismatch { expected: 1, found: alpha.degree });
    }
    alpha.evaluate(std::slice::from_ref(theta))
}

/// `Θ(φ♯(f))` for the matrix point `map`.
pub fn pushforward_derivation(
    map: &AzumayaPointMap,
    theta: &Derivation,
    f: &FnSpec,
) -> Result<ComplexMatrix, PointError> {
    let value = evaluate(map, f)?;
    Ok(theta.apply_float(&value))
}

// ---------------------------------------------------------------------------
// Families over a 1-dimensional base

/// `r×r` matrix whose entries are polynomials in the base coordinate `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMatrix {
    r: usize,
    /// `coeffs[k]` multiplies `x^k`.
    coeffs: Vec<ComplexMatrix>,
}

impl PolyMatrix {
    pub fn zero(r: usize) -> Self {
        PolyMatrix { r, coeffs: Vec::new() }
    }

    pub fn constant(m: ComplexMatrix) -> Self {
        PolyMatrix { r: m.nrows(), coeffs: vec![m] }
    }

    pub fn from_coeffs(r: usize, coeffs: Vec<ComplexMatrix>) -> Self {
        assert!(coeffs.iter().all(|c| c.nrows() == r && c.ncols() == r), "coefficient shape");
        PolyMatrix { r, coeffs }
    }

    /// `x^k · m`.
    pub fn monomial(k: usize, m: ComplexMatrix) -> Self {
        let r = m.nrows();
        let mut coeffs = vec![ComplexMatrix::zeros(r, r); k];
        coeffs.push(m);
        PolyMatrix { r, coeffs }
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn coeff(&self, k: usize) -> ComplexMatrix {
        self.coeffs.get(k).cloned().unwrap_or_else(|| ComplexMatrix::zeros(self.r, self.r))
    }

    pub fn degree_bound(&self) -> usize {
        self.coeffs.len()
    }

    pub fn eval(&self, x: f64) -> ComplexMatrix {
        let mut acc = ComplexMatrix::zeros(self.r, self.r);
        for c in self.coeffs.iter().rev() {
            acc = acc * Complex64::new(x, 0.0) + c;
        }
        acc
    }

    pub fn add(&self, other: &PolyMatrix) -> PolyMatrix {
        let n = self.coeffs.len().max(other.coeffs.len());
        PolyMatrix { r: self.r, coeffs: (0..n).map(|k| self.coeff(k) + other.coeff(k)).collect() }
    }

    pub fn mul(&self, other: &PolyMatrix) -> PolyMatrix {
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            return Self::zero(self.r);
        }
        let n = self.coeffs.len() + other.coeffs.len() - 1;
        let mut coeffs = vec![ComplexMatrix::zeros(self.r, self.r); n];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        PolyMatrix { r: self.r, coeffs }
    }

    pub fn derivative(&self) -> PolyMatrix {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| c * Complex64::new(k as f64, 0.0))
            .collect();
        PolyMatrix { r: self.r, coeffs }
    }

    pub fn scale_poly(&self, p: &[f64]) -> PolyMatrix {
        let scalar = PolyMatrix {
            r: self.r,
            coeffs: p.iter().map(|&c| ComplexMatrix::identity(self.r, self.r) * Complex64::new(c, 0.0)).collect(),
        };
        scalar.mul(self)
    }

    pub fn commutator(&self, other: &PolyMatrix) -> PolyMatrix {
        let ab = self.mul(other);
        let ba = other.mul(self);
        let n = ab.coeffs.len().max(ba.coeffs.len());
        PolyMatrix { r: self.r, coeffs: (0..n).map(|k| ab.coeff(k) - ba.coeff(k)).collect() }
    }

    /// Largest coefficient norm.
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// A derivation of the family algebra `C[x] ⊗ M_r`, given by its values on
/// the central coordinate `x·I` and on the constant matrix units.
#[derive(Debug, Clone)]
pub struct DerivationData {
    pub r: usize,
    pub on_coordinate: PolyMatrix,
    /// `on_units[i*r + j] = D(E_ij)`.
    pub on_units: Vec<PolyMatrix>,
}

impl DerivationData {
    /// `ξ(x)∂_x + ad(a(x))` with respect to the trivial connection.
    pub fn from_parts(xi: &[f64], a: &PolyMatrix) -> Self {
        let r = a.rank();
        let on_coordinate = PolyMatrix::constant(ComplexMatrix::identity(r, r)).scale_poly(xi);
        let mut on_units = Vec::with_capacity(r * r);
        for i in 0..r {
            for j in 0..r {
                let mut e = ComplexMatrix::zeros(r, r);
                e[(i, j)] = Complex64::new(1.0, 0.0);
                on_units.push(a.commutator(&PolyMatrix::constant(e)));
            }
        }
        DerivationData { r, on_coordinate, on_units }
    }

    /// Action on a section, extended by the Leibniz rule.
    pub fn apply(&self, s: &PolyMatrix) -> PolyMatrix {
        let r = self.r;
        let mut out = PolyMatrix::zero(r);
        for k in 0..s.degree_bound() {
            let c = s.coeff(k);
            for i in 0..r {
                for j in 0..r {
                    let v = c[(i, j)];
                    if v == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    let mut e = ComplexMatrix::zeros(r, r);
                    e[(i, j)] = v;
                    let unit = PolyMatrix::constant(e.clone());
                    // D(x^k v E_ij) = k x^{k-1} D(xI) v E_ij + x^k v D(E_ij)
                    if k > 0 {
                        let lower = PolyMatrix::monomial(k - 1, ComplexMatrix::identity(r, r) * Complex64::new(k as f64, 0.0));
                        out = out.add(&lower.mul(&self.on_coordinate).mul(&unit));
                    }
                    let xk = PolyMatrix::monomial(k, ComplexMatrix::identity(r, r) * v);
                    out = out.add(&xk.mul(&self.on_units[i * r + j]));
                }
            }
        }
        out
    }
}

/// Splitting `D = ∇_{ξ∂x} + ad(a)` of a family derivation.
#[derive(Debug, Clone)]
pub struct FamilyDerivation {
    /// Base vector-field coefficient, ascending powers of `x`.
    pub xi: Vec<f64>,
    /// Trace-free inner generator.
    pub inner: PolyMatrix,
}

impl FamilyDerivation {
    pub fn apply(&self, s: &PolyMatrix) -> PolyMatrix {
        s.derivative().scale_poly(&self.xi).add(&self.inner.commutator(s))
    }
}

const SPLIT_LIMIT: f64 = 1e-9;

pub fn split_derivation(data: &DerivationData) -> Result<FamilyDerivation, DgaError> {
    let r = data.r;
    if data.on_units.len() != r * r {
        return Err(DgaError::RankMismatch { expected: r * r, found: data.on_units.len() });
    }
    let scale = data
        .on_units
        .iter()
        .map(PolyMatrix::norm)
        .fold(data.on_coordinate.norm(), f64::max)
        .max(1.0);
    // central part of D(xI)
    let mut xi = Vec::new();
    let mut residual: f64 = 0.0;
    for k in 0..data.on_coordinate.degree_bound() {
        let c = data.on_coordinate.coeff(k);
        let t = c.trace() / r as f64;
        residual = residual.max(t.im.abs());
        xi.push(t.re);
        let remainder = c - ComplexMatrix::identity(r, r) * t;
        residual = residual.max(remainder.norm());
    }
    // ad(a_k) = D_k(E_ij) for each power of x, in the least-squares sense
    let degree = data.on_units.iter().map(PolyMatrix::degree_bound).max().unwrap_or(0);
    let mut system = ComplexMatrix::zeros(r * r * r * r, r * r);
    for unknown in 0..r * r {
        let mut a = ComplexMatrix::zeros(r, r);
        a[(unknown / r, unknown % r)] = Complex64::new(1.0, 0.0);
        for probe in 0..r * r {
            let mut e = ComplexMatrix::zeros(r, r);
            e[(probe / r, probe % r)] = Complex64::new(1.0, 0.0);
            let image = &a * &e - &e * &a;
            for (idx, v) in image.iter().enumerate() {
                // column-major iteration order of nalgebra
                let (row, col) = (idx % r, idx / r);
                system[(probe * r * r + row * r + col, unknown)] = *v;
            }
        }
    }
    let svd = system.clone().svd(true, true);
    let mut inner = Vec::with_capacity(degree);
    for k in 0..degree {
        let mut rhs = nalgebra::DVector::zeros(r * r * r * r);
        for probe in 0..r * r {
            let c = data.on_units[probe].coeff(k);
            for row in 0..r {
                for col in 0..r {
                    rhs[probe * r * r + row * r + col] = c[(row, col)];
                }
            }
        }
        let sol = svd.solve(&rhs, 1e-12).map_err(|_| DgaError::NotADerivation { residual: f64::INFINITY })?;
        residual = residual.max((&system * &sol - &rhs).norm());
        let mut a = ComplexMatrix::from_fn(r, r, |i, j| sol[i * r + j]);
        let t = a.trace() / r as f64;
        a -= ComplexMatrix::identity(r, r) * t;
        inner.push(a);
    }
    if residual > SPLIT_LIMIT * scale {
        return Err(DgaError::NotADerivation { residual });
    }
    while xi.last() == Some(&0.0) {
        xi.pop();
    }
    Ok(FamilyDerivation { xi, inner: PolyMatrix::from_coeffs(r, inner) })
}

// ---------------------------------------------------------------------------
// Law checks

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LawCount {
    pub probes: usize,
    pub failures: usize,
}

impl LawCount {
    fn record(&mut self, ok: bool) {
        self.probes += 1;
        if !ok {
            self.failures += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LawReport {
    pub r: usize,
    pub max_degree: usize,
    pub ad_rank: usize,
    pub expected_ad_rank: usize,
    pub d_squared: LawCount,
    pub leibniz: LawCount,
    /// Whether every pair of basis monomials was checked, rather than a
    /// covering set plus pseudo-random pairs.
    pub leibniz_exhaustive: bool,
    pub antisymmetry: LawCount,
    pub pass: bool,
}

/// Small deterministic generator for probe selection.
struct Probe(u64);

impl Probe {
    fn next(&mut self, bound: usize) -> usize {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 % bound as u64) as usize
    }
}

fn probe_matrices(r: usize) -> Vec<QMatrix> {
    let mut out: Vec<QMatrix> = (0..r * r).map(|k| QMatrix::unit(r, k / r, k % r)).collect();
    out.extend(sl_basis(r).into_iter().skip(r * (r - 1)));
    out.push(QMatrix::from_entries(r, (0..r * r).map(|k| Complex::new(q(k as i64 % 3 - 1), q(0))).collect()));
    out
}

fn random_monomial(degree: usize, pool: &[QMatrix], rng: &mut Probe) -> DgaElement {
    let coeff = pool[rng.next(pool.len())].clone();
    let gens = (0..degree).map(|_| pool[rng.next(pool.len())].clone()).collect();
    DgaElement::monomial(coeff, gens)
}

/// Basis monomial `E_k dA_{g_1} … dA_{g_l}`.
fn basis_monomial(r: usize, k: usize, gens: &[usize], basis: &[QMatrix]) -> DgaElement {
    DgaElement::monomial(QMatrix::unit(r, k / r, k % r), gens.iter().map(|&g| basis[g].clone()).collect())
}

fn leibniz_holds(alpha: &DgaElement, beta: &DgaElement) -> bool {
    let check = || -> Result<bool, DgaError> {
        let lhs = dga_d(&dga_wedge(alpha, beta)?);
        let first = dga_wedge(&dga_d(alpha), beta)?;
        let mut second = dga_wedge(alpha, &dga_d(beta))?;
        if alpha.degree % 2 == 1 {
            second = second.neg();
        }
        lhs.equals(&first.add(&second)?)
    };
    check().unwrap_or(false)
}

/// `index` written in base `base` with `len` digits, most significant first.
fn digits(mut index: usize, base: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = index % base;
        index /= base;
    }
    out
}

/// Pairs of basis monomials checked exhaustively up to this count.
const EXHAUSTIVE_LEIBNIZ: usize = 5000;

/// Exact checks of `d² = 0` on every basis probe `E_ij dA_1 … dA_l`
/// (`A_k` from the `sl_r` basis, `l ≤ max_degree`), the graded Leibniz rule
/// on pairs of basis monomials of total degree `≤ max_degree` (all of them
/// when there are few enough), and antisymmetry of evaluation under swapping
/// arguments.
pub fn check_laws(r: usize, max_degree: usize) -> LawReport {
    let basis = sl_basis(r);
    let mut d_squared = LawCount { probes: 0, failures: 0 };
    let mut level: Vec<Vec<usize>> = vec![Vec::new()];
    for degree in 0..=max_degree {
        for gens in &level {
            for k in 0..r * r {
                let omega = basis_monomial(r, k, gens, &basis);
                d_squared.record(dga_d(&dga_d(&omega)).is_zero());
            }
        }
        if degree < max_degree {
            level = level
                .iter()
                .flat_map(|g| (0..basis.len()).map(move |b| [g.as_slice(), &[b]].concat()))
                .collect();
        }
    }

    let pool = probe_matrices(r);
    let mut rng = Probe(0x9e37_79b9_7f4a_7c15 ^ r as u64);
    let (n_units, n_basis) = (r * r, basis.len());
    let count = |p: usize| n_units * n_basis.pow(p as u32);
    let pairs: usize = (0..=max_degree).flat_map(|p| (0..=max_degree - p).map(move |q| count(p) * count(q))).sum();
    let leibniz_exhaustive = pairs <= EXHAUSTIVE_LEIBNIZ;
    let mut leibniz = LawCount { probes: 0, failures: 0 };
    for p in 0..=max_degree {
        for q_deg in 0..=max_degree - p {
            if leibniz_exhaustive {
                for a in 0..count(p) {
                    let alpha = basis_monomial(r, a % n_units, &digits(a / n_units, n_basis, p), &basis);
                    for b in 0..count(q_deg) {
                        let beta = basis_monomial(r, b % n_units, &digits(b / n_units, n_basis, q_deg), &basis);
                        leibniz.record(leibniz_holds(&alpha, &beta));
                    }
                }
                continue;
            }
            // every unit and basis element in every slot at least once
            for k in 0..n_units.max(n_basis) {
                let gens = |offset: usize, len: usize| (0..len).map(|s| (k + offset + s) % n_basis).collect::<Vec<_>>();
                let alpha = basis_monomial(r, k % n_units, &gens(0, p), &basis);
                let beta = basis_monomial(r, (k + 1) % n_units, &gens(p, q_deg), &basis);
                leibniz.record(leibniz_holds(&alpha, &beta));
            }
            for _ in 0..6 {
                let alpha = random_monomial(p, &pool, &mut rng);
                let beta = random_monomial(q_deg, &pool, &mut rng);
                leibniz.record(leibniz_holds(&alpha, &beta));
            }
        }
    }

    let mut antisymmetry = LawCount { probes: 0, failures: 0 };
    for degree in 2..=max_degree.max(2) {
        for _ in 0..12 {
            let omega = random_monomial(degree, &pool, &mut rng);
            let args: Vec<Derivation> = (0..degree).map(|_| inner_derivation(&basis[rng.next(basis.len())])).collect();
            let i = rng.next(degree);
            let j = (i + 1 + rng.next(degree - 1)) % degree;
            let mut swapped = args.clone();
            swapped.swap(i, j);
            let ok = match (omega.evaluate(&args), omega.evaluate(&swapped)) {
                (Ok(a), Ok(b)) => a.add(&b).is_zero(),
                _ => false,
            };
            antisymmetry.record(ok);
        }
    }

    let ad = ad_rank(r);
    let expected = r * r - 1;
    let pass = ad == expected && d_squared.failures == 0 && leibniz.failures == 0 && antisymmetry.failures == 0;
    LawReport {
        r,
        max_degree,
        ad_rank: ad,
        expected_ad_rank: expected,
        d_squared,
        leibniz,
        leibniz_exhaustive,
        antisymmetry,
        pass,
    }
}
