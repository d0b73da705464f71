//! Matrix-valued points of `R^n`: a commuting tuple of `r×r` matrices read
//! as the images of the coordinate functions.
//!
//! A smooth function is evaluated through its jets at the joint spectrum:
//! on each joint generalized eigenspace the result is the Taylor sum of the
//! function at the block's eigenvalue tuple, applied to the nilpotent parts.

use std::fmt;
use std::sync::OnceLock;

use num::complex::Complex64;
use num::{BigInt, BigRational, One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jet::{extract_jet, multi_factorial, multi_indices, FnSpec, JetError};
use crate::linalg::{
    commutation_defect, identity, joint_block_decompose, matrix_power, scale_of,
    spectral_decompose, BlockDecomposition, ComplexMatrix, LinalgError, DEFAULT_TOL,
};

/// Differentiability class `C^k`, with `C^∞` as its own variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Smoothness {
    Finite(u32),
    Infinite,
}

impl Smoothness {
    /// `min(k, bound)` without ever materializing infinity.
    pub fn cap(self, bound: u32) -> u32 {
        match self {
            Smoothness::Finite(k) => k.min(bound),
            Smoothness::Infinite => bound,
        }
    }
}

impl fmt::Display for Smoothness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Smoothness::Finite(k) => write!(f, "{k}"),
            Smoothness::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for Smoothness {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Smoothness::Finite(k) => s.serialize_u32(*k),
            Smoothness::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Smoothness {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(k) => Ok(Smoothness::Finite(k)),
            Raw::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "∞") => {
                Ok(Smoothness::Infinite)
            }
            Raw::Text(t) => t
                .parse()
                .map(Smoothness::Finite)
                .map_err(|_| serde::de::Error::custom(format!("invalid smoothness {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PointError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Jet(JetError),
    #[error("function has a pole at support point {point:?}")]
    PoleAtSupport { point: Vec<f64> },
    #[error("function takes {found} variables but the target has dimension {expected}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("axis {axis} out of range for target dimension {n}")]
    AxisOutOfRange { axis: usize, n: usize },
}

impl From<JetError> for PointError {
    fn from(e: JetError) -> Self {
        match e {
            JetError::PoleAtPoint { point } => PointError::PoleAtSupport { point },
            other => PointError::Jet(other),
        }
    }
}

/// A commuting tuple `(m^1, …, m^n)` of `r×r` matrices with smoothness class.
#[derive(Debug)]
pub struct AzumayaPointMap {
    ms: Vec<ComplexMatrix>,
    k: Smoothness,
    tol: f64,
    decomposition: OnceLock<Result<BlockDecomposition, LinalgError>>,
}

impl Clone for AzumayaPointMap {
    fn clone(&self) -> Self {
        AzumayaPointMap {
            ms: self.ms.clone(),
            k: self.k,
            tol: self.tol,
            decomposition: OnceLock::new(),
        }
    }
}

impl AzumayaPointMap {
    /// Checks shapes only; admissibility is a separate verdict.
    pub fn new(ms: Vec<ComplexMatrix>, k: Smoothness, tol: f64) -> Result<Self, PointError> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(LinalgError::InvalidTolerance.into());
        }
        // reuse the tuple validation of the defect computation
        commutation_defect(&ms)?;
        Ok(AzumayaPointMap { ms, k, tol, decomposition: OnceLock::new() })
    }

    pub fn with_default_tol(ms: Vec<ComplexMatrix>, k: Smoothness) -> Result<Self, PointError> {
        Self::new(ms, k, DEFAULT_TOL)
    }

    pub fn rank(&self) -> usize {
        self.ms[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.ms.len()
    }

    pub fn matrices(&self) -> &[ComplexMatrix] {
        &self.ms
    }

    pub fn smoothness(&self) -> Smoothness {
        self.k
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn scale(&self) -> f64 {
        self.ms.iter().map(scale_of).fold(1.0, f64::max)
    }

    /// Joint block decomposition, computed once and cached.
    pub fn decomposition(&self) -> Result<&BlockDecomposition, LinalgError> {
        self.decomposition
            .get_or_init(|| joint_block_decompose(&self.ms, self.tol))
            .as_ref()
            .map_err(Clone::clone)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AdmissibilityFailure {
    NotCommuting,
    NonRealSpectrum,
}

impl fmt::Display for AdmissibilityFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdmissibilityFailure::NotCommuting => write!(f, "NotCommuting"),
            AdmissibilityFailure::NonRealSpectrum => write!(f, "NonRealSpectrum"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub commutation_defect: f64,
    pub max_imaginary_part: f64,
    pub limit: f64,
    pub admissible: bool,
    pub reason: Option<AdmissibilityFailure>,
}

/// Largest `|Im λ|` over clustered eigenvalues of each matrix. Cluster means
/// are used because raw eigenvalues of defective matrices carry spurious
/// imaginary parts of order `ε^{1/p}`.
fn max_imaginary_part(ms: &[ComplexMatrix], tol: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for m in ms {
        let values: Vec<Complex64> = match spectral_decompose(m, tol) {
            Ok(sd) => sd.eigenvalues,
            Err(_) => m.clone().schur().eigenvalues().map(|v| v.iter().copied().collect()).unwrap_or_default(),
        };
        for v in values {
            worst = worst.max(v.im.abs());
        }
    }
    worst
}

pub fn validate(map: &AzumayaPointMap) -> AdmissibilityReport {
    let limit = map.tol * map.scale();
    let defect = commutation_defect(&map.ms).unwrap_or(f64::INFINITY);
    let imag = max_imaginary_part(&map.ms, map.tol);
    let reason = if defect > limit {
        Some(AdmissibilityFailure::NotCommuting)
    } else if imag > limit {
        Some(AdmissibilityFailure::NonRealSpectrum)
    } else {
        None
    };
    AdmissibilityReport {
        commutation_defect: defect,
        max_imaginary_part: imag,
        limit,
        admissible: reason.is_none(),
        reason,
    }
}

/// Support points with lengths, per-axis nilpotency orders and filtrations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportScheme {
    pub points: Vec<Vec<f64>>,
    pub lengths: Vec<usize>,
    pub nilpotency_orders: Vec<Vec<usize>>,
    pub filtration: Vec<Vec<usize>>,
}

impl SupportScheme {
    pub fn total_length(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// True when every block is semisimple.
    pub fn is_reduced(&self) -> bool {
        self.nilpotency_orders.iter().flatten().all(|&p| p == 1)
    }
}

pub fn support(map: &AzumayaPointMap) -> Result<SupportScheme, PointError> {
    let bd = map.decomposition()?;
    Ok(support_of(bd))
}

pub(crate) fn support_of(bd: &BlockDecomposition) -> SupportScheme {
    SupportScheme {
        points: bd.block_points.clone(),
        lengths: bd.block_sizes.clone(),
        nilpotency_orders: (0..bd.len()).map(|l| bd.nilpotency_orders(l)).collect(),
        filtration: (0..bd.len()).map(|l| bd.filtration(l)).collect(),
    }
}

/// Truncation order of the jet formula on a block of length `len`.
pub fn truncation_order(k: Smoothness, n: usize, len: usize) -> u32 {
    k.cap((n * len.saturating_sub(1)) as u32)
}

/// `f(m^1, …, m^n)` by the block-wise jet formula.
pub fn evaluate(map: &AzumayaPointMap, f: &FnSpec) -> Result<ComplexMatrix, PointError> {
    if f.arity() != map.dim() {
        return Err(PointError::ArityMismatch { expected: map.dim(), found: f.arity() });
    }
    let bd = map.decomposition()?;
    let r = map.rank();
    let mut block_diag = ComplexMatrix::zeros(r, r);
    for l in 0..bd.len() {
        let range = bd.block_range(l);
        let block = evaluate_block(bd, l, map.k, f)?;
        block_diag.view_mut((range.start, range.start), (range.len(), range.len())).copy_from(&block);
    }
    Ok(&bd.basis_change * block_diag * &bd.basis_inverse)
}

/// Evaluation on one block, in the block basis.
pub fn evaluate_block(
    bd: &BlockDecomposition,
    l: usize,
    k: Smoothness,
    f: &FnSpec,
) -> Result<ComplexMatrix, PointError> {
    let size = bd.block_sizes[l];
    let n = bd.scales.len();
    let orders = bd.nilpotency_orders(l);
    let nilpotent = bd.nilpotent_parts(l);
    // Taylor terms with α_i >= p_i vanish; cap the jet accordingly.
    let useful: u32 = orders.iter().map(|&p| (p as u32).saturating_sub(1)).sum();
    let d = truncation_order(k, n, size).min(useful);
    let point = &bd.block_points[l];
    let jet = extract_jet(f, point, d, None)?;
    let powers: Vec<Vec<ComplexMatrix>> = nilpotent
        .iter()
        .zip(&orders)
        .map(|(m, &p)| (0..p).map(|e| matrix_power(m, e)).collect())
        .collect();
    let mut out = ComplexMatrix::zeros(size, size);
    for alpha in multi_indices(n, d) {
        if alpha.iter().zip(&orders).any(|(&a, &p)| a as usize >= p) {
            continue;
        }
        let coeff = jet.get(&alpha) / multi_factorial(&alpha);
        if coeff == 0.0 {
            continue;
        }
        let mut term = identity(size);
        for (i, &a) in alpha.iter().enumerate() {
            if a > 0 {
                term = &term * &powers[i][a as usize];
            }
        }
        out += term * Complex64::new(coeff, 0.0);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Minimal annihilator

/// Monic real polynomial `Π (y - root)^mult` together with its expansion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Annihilator {
    pub axis: usize,
    /// `(root, multiplicity)` in increasing root order.
    pub factors: Vec<(f64, u32)>,
    /// Coefficients in ascending powers of `y`.
    pub coefficients: Vec<f64>,
}

impl Annihilator {
    fn from_factors(axis: usize, factors: Vec<(f64, u32)>) -> Self {
        let mut coefficients = vec![1.0];
        for &(root, mult) in &factors {
            for _ in 0..mult {
                let mut next = vec![0.0; coefficients.len() + 1];
                for (i, &c) in coefficients.iter().enumerate() {
                    next[i + 1] += c;
                    next[i] -= root * c;
                }
                coefficients = next;
            }
        }
        Annihilator { axis, factors, coefficients }
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// Matrix substitution `p(m)`, by Horner's rule.
    pub fn apply(&self, m: &ComplexMatrix) -> ComplexMatrix {
        let r = m.nrows();
        let mut acc = ComplexMatrix::zeros(r, r);
        for &c in self.coefficients.iter().rev() {
            acc = &acc * m + identity(r) * Complex64::new(c, 0.0);
        }
        acc
    }

    /// Exact ascending coefficients, snapping each root to the nearest
    /// rational with denominator at most `max_den`. `None` if a root is not
    /// within `1e-9` of such a rational.
    pub fn exact_coefficients(&self, max_den: u64) -> Option<Vec<BigRational>> {
        let mut coeffs = vec![BigRational::one()];
        for &(root, mult) in &self.factors {
            let q = rationalize(root, max_den, 1e-9)?;
            for _ in 0..mult {
                let mut next = vec![BigRational::zero(); coeffs.len() + 1];
                for (i, c) in coeffs.iter().enumerate() {
                    next[i + 1] += c;
                    next[i] -= &q * c;
                }
                coeffs = next;
            }
        }
        Some(coeffs)
    }
}

impl fmt::Display for Annihilator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let var = format!("y{}", self.axis + 1);
        if self.factors.is_empty() {
            return write!(f, "1");
        }
        for (i, &(root, mult)) in self.factors.iter().enumerate() {
            if i > 0 {
                write!(f, "*")?;
            }
            let base = if root == 0.0 {
                var.clone()
            } else if root < 0.0 {
                format!("({var} + {})", -root)
            } else {
                format!("({var} - {root})")
            };
            if mult > 1 {
                write!(f, "{base}^{mult}")?;
            } else {
                write!(f, "{base}")?;
            }
        }
        Ok(())
    }
}

/// Best rational approximation with bounded denominator (continued fractions).
pub fn rationalize(x: f64, max_den: u64, tol: f64) -> Option<BigRational> {
    if !x.is_finite() {
        return None;
    }
    let (mut h0, mut h1) = (BigInt::zero(), BigInt::one());
    let (mut k0, mut k1) = (BigInt::one(), BigInt::zero());
    let mut rest = x;
    let mut best: Option<BigRational> = None;
    for _ in 0..64 {
        let a = rest.floor();
        let ai = BigInt::from(a as i64);
        let h2 = &ai * &h1 + &h0;
        let k2 = &ai * &k1 + &k0;
        if k2 > BigInt::from(max_den) {
            break;
        }
        let cand = BigRational::new(h2.clone(), k2.clone());
        let err = (cand.to_f64().unwrap_or(f64::NAN) - x).abs();
        best = Some(cand);
        if err <= tol * x.abs().max(1.0) * 1e-3 {
            break;
        }
        (h0, h1) = (h1, h2);
        (k0, k1) = (k1, k2);
        let frac = rest - a;
        if frac.abs() < 1e-15 {
            break;
        }
        rest = 1.0 / frac;
    }
    let best = best?;
    let err = (best.to_f64()? - x).abs();
    (err <= tol * x.abs().max(1.0)).then_some(best)
}

pub fn minimal_annihilator(map: &AzumayaPointMap, axis: usize) -> Result<Annihilator, PointError> {
    if axis >= map.dim() {
        return Err(PointError::AxisOutOfRange { axis, n: map.dim() });
    }
    let bd = map.decomposition()?;
    let eps = map.tol * bd.scales[axis];
    let mut groups: Vec<(f64, u32, usize)> = Vec::new(); // (sum of roots, order, count)
    for l in 0..bd.len() {
        let root = bd.block_points[l][axis];
        let order = nilpotent_order_on_axis(bd, l, axis) as u32;
        match groups.iter_mut().find(|g| (g.0 / g.2 as f64 - root).abs() <= eps) {
            Some(g) => {
                g.0 += root;
                g.1 = g.1.max(order);
                g.2 += 1;
            }
            None => groups.push((root, order, 1)),
        }
    }
    let mut factors: Vec<(f64, u32)> =
        groups.into_iter().map(|(s, p, c)| (s / c as f64, p)).collect();
    factors.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    Ok(Annihilator::from_factors(axis, factors))
}

fn nilpotent_order_on_axis(bd: &BlockDecomposition, l: usize, axis: usize) -> usize {
    crate::linalg::nilpotent_index(&bd.nilpotent_part(l, axis), bd.scales[axis], bd.tol)
}

// ---------------------------------------------------------------------------
// Push-forward module

/// One summand of the push-forward module, supported at a single point.
#[derive(Debug, Clone)]
pub struct FiberModule {
    pub point: Vec<f64>,
    pub dimension: usize,
    pub filtration: Vec<usize>,
    /// Nonzero nilpotent parts `m^i - λ^i` on the block, tagged by axis.
    pub generators: Vec<(usize, ComplexMatrix)>,
    /// Jordan block sizes of a generic element of the nilpotent radical.
    pub jordan_type: Vec<usize>,
}

impl FiberModule {
    pub fn summary(&self) -> String {
        describe_jordan_type(&self.jordan_type)
    }
}

#[derive(Debug, Clone)]
pub struct ModuleStructure {
    pub fibers: Vec<FiberModule>,
}

impl ModuleStructure {
    pub fn total_length(&self) -> usize {
        self.fibers.iter().map(|f| f.dimension).sum()
    }
}

/// Names a Jordan type as free part plus filtered summands, e.g. `[2, 1]`
/// gives "1 ⊕ filtered-2" and `[1, 1, 1]` gives "free rank-3".
pub fn describe_jordan_type(sizes: &[usize]) -> String {
    let free = sizes.iter().filter(|&&s| s == 1).count();
    let mut filtered: Vec<usize> = sizes.iter().copied().filter(|&s| s > 1).collect();
    filtered.sort_unstable();
    if filtered.is_empty() {
        return format!("free rank-{free}");
    }
    let mut parts = Vec::new();
    if free > 0 {
        parts.push(free.to_string());
    }
    parts.extend(filtered.iter().map(|s| format!("filtered-{s}")));
    parts.join(" ⊕ ")
}

pub fn pushforward_module(map: &AzumayaPointMap) -> Result<ModuleStructure, PointError> {
    let bd = map.decomposition()?;
    Ok(module_of(bd))
}

pub(crate) fn module_of(bd: &BlockDecomposition) -> ModuleStructure {
    let fibers = (0..bd.len())
        .map(|l| {
            let generators = bd
                .nilpotent_parts(l)
                .into_iter()
                .enumerate()
                .filter(|(i, n)| n.norm() > bd.tol * bd.scales[*i])
                .collect();
            FiberModule {
                point: bd.block_points[l].clone(),
                dimension: bd.block_sizes[l],
                filtration: bd.filtration(l),
                generators,
                jordan_type: bd.generic_jordan_type(l),
            }
        })
        .collect();
    ModuleStructure { fibers }
}

/// Residual of `p ↦ P·blockdiag(p(λ) Id)·P^{-1}`: how far `evaluate` under
/// `C^0` is from its defining block-scalar form.
pub fn c0_residual(map: &AzumayaPointMap, f: &FnSpec, value: &ComplexMatrix) -> Result<f64, PointError> {
    let bd = map.decomposition()?;
    let conj = &bd.basis_inverse * value * &bd.basis_change;
    let mut expected = ComplexMatrix::zeros(map.rank(), map.rank());
    for l in 0..bd.len() {
        let v = f.eval(&bd.block_points[l])?;
        for i in bd.block_range(l) {
            expected[(i, i)] = Complex64::new(v, 0.0);
        }
    }
    Ok((conj - expected).norm())
}
