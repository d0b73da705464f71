//! Polynomial differential forms on the target `R^n`, pulled back to the
//! reduced branches of a diagram, and checks for the adapted-map conditions:
//! relative dimension zero, Lagrangian, special Lagrangian, vanishing of a
//! calibration form and holomorphicity of planar branches.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num::complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jet::MPoly;
use crate::linalg::{joint_block_decompose, ComplexMatrix, DEFAULT_TOL};
use crate::worldvolume::{BranchDiagram, WvError};

pub const DEFAULT_FORM_TOL: f64 = 1e-8;
pub const DEFAULT_CR_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormsError {
    #[error("dimension condition fails: base dimension {base}, target dimension {target} ({requirement})")]
    DimensionCondition { base: usize, target: usize, requirement: String },
    #[error("invalid form: {0}")]
    InvalidForm(String),
    #[error("fiber at z = {re} + {im}i is not admissible: {reason}")]
    FiberNotAdmissible { re: f64, im: f64, reason: String },
    #[error(transparent)]
    Worldvolume(#[from] WvError),
}

/// `Σ_I c_I(y) dy^{i_1} ∧ … ∧ dy^{i_p}` over strictly increasing zero-based
/// index tuples, with polynomial coefficients in the target coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyForm {
    n: usize,
    degree: usize,
    terms: BTreeMap<Vec<usize>, MPoly>,
}

impl PolyForm {
    pub fn new(n: usize, degree: usize) -> Result<Self, FormsError> {
        if degree > n {
            return Err(FormsError::InvalidForm(format!("degree {degree} exceeds dimension {n}")));
        }
        Ok(PolyForm { n, degree, terms: BTreeMap::new() })
    }

    /// Adds `c · dy^{indices}`; unsorted tuples are sorted with the
    /// permutation sign, repeated indices vanish.
    pub fn add_term(&mut self, indices: &[usize], coeff: MPoly) -> Result<(), FormsError> {
        if indices.len() != self.degree {
            return Err(FormsError::InvalidForm(format!(
                "term of degree {} in a {}-form",
                indices.len(),
                self.degree
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n) {
            return Err(FormsError::InvalidForm(format!("index {bad} out of range for R^{}", self.n)));
        }
        if coeff.nvars() != self.n {
            return Err(FormsError::InvalidForm(format!(
                "coefficient has {} variables, expected {}",
                coeff.nvars(),
                self.n
            )));
        }
        let Some((sorted, sign)) = sort_with_sign(indices) else { return Ok(()) };
        let add = if sign < 0.0 { coeff.scale(-1.0) } else { coeff };
        let slot = self.terms.entry(sorted.clone()).or_insert_with(|| MPoly::zero(self.n));
        *slot = &*slot + &add;
        if slot.is_zero() {
            self.terms.remove(&sorted);
        }
        Ok(())
    }

    pub fn constant_term(mut self, indices: &[usize], c: f64) -> Result<Self, FormsError> {
        let n = self.n;
        self.add_term(indices, MPoly::constant(n, c))?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<usize>, &MPoly)> {
        self.terms.iter()
    }

    pub fn add(&self, other: &PolyForm) -> Result<PolyForm, FormsError> {
        if self.n != other.n || self.degree != other.degree {
            return Err(FormsError::InvalidForm("adding forms of different shape".into()));
        }
        let mut out = self.clone();
        for (i, c) in &other.terms {
            out.add_term(i, c.clone())?;
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> PolyForm {
        let terms = self
            .terms
            .iter()
            .map(|(i, c)| (i.clone(), c.scale(s)))
            .filter(|(_, c)| !c.is_zero())
            .collect();
        PolyForm { n: self.n, degree: self.degree, terms }
    }

    /// `α_y(v_1, …, v_p)`.
    pub fn eval(&self, y: &[f64], vectors: &[Vec<f64>]) -> f64 {
        debug_assert_eq!(vectors.len(), self.degree);
        self.terms
            .iter()
            .map(|(idx, c)| {
                let minor: Vec<Vec<f64>> =
                    vectors.iter().map(|v| idx.iter().map(|&i| v[i]).collect()).collect();
                c.eval(y) * det(minor)
            })
            .sum()
    }

    /// `Σ_I |c_I(y)| Π_k |v_k|`: the size of the terms before cancellation.
    fn magnitude(&self, y: &[f64], vectors: &[Vec<f64>]) -> f64 {
        let vnorm: f64 = vectors.iter().map(|v| v.iter().map(|x| x.abs()).sum::<f64>()).product();
        self.terms.values().map(|c| c.eval_abs(y)).sum::<f64>() * vnorm
    }

    /// `e^{123} + e^{145} + e^{167} + e^{246} − e^{257} − e^{347} − e^{356}`.
    pub fn standard_g2() -> PolyForm {
        let terms: [([usize; 3], f64); 7] = [
            ([1, 2, 3], 1.0),
            ([1, 4, 5], 1.0),
            ([1, 6, 7], 1.0),
            ([2, 4, 6], 1.0),
            ([2, 5, 7], -1.0),
            ([3, 4, 7], -1.0),
            ([3, 5, 6], -1.0),
        ];
        let mut form = PolyForm::new(7, 3).expect("3 <= 7");
        for (idx, c) in terms {
            let zero_based: Vec<usize> = idx.iter().map(|i| i - 1).collect();
            form.add_term(&zero_based, MPoly::constant(7, c)).expect("valid term");
        }
        form
    }

    /// `dy¹ ∧ dy²` on `R²`.
    pub fn area_form() -> PolyForm {
        PolyForm::new(2, 2).and_then(|f| f.constant_term(&[0, 1], 1.0)).expect("valid form")
    }
}

fn sort_with_sign(indices: &[usize]) -> Option<(Vec<usize>, f64)> {
    let mut v = indices.to_vec();
    let mut sign = 1.0;
    for i in 0..v.len() {
        for j in 0..v.len() - 1 - i {
            if v[j] > v[j + 1] {
                v.swap(j, j + 1);
                sign = -sign;
            }
        }
    }
    if v.windows(2).any(|w| w[0] == w[1]) {
        return None;
    }
    Some((v, sign))
}

/// Determinant by partial-pivoting elimination.
fn det(m: Vec<Vec<f64>>) -> f64 {
    let p = m.len();
    if p == 0 {
        return 1.0;
    }
    let mut a = m;
    let mut d = 1.0;
    for col in 0..p {
        let pivot = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap_or(col);
        if a[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap(pivot, col);
            d = -d;
        }
        d *= a[col][col];
        for row in col + 1..p {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..p {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFormDoc {
    pub n: usize,
    pub degree: usize,
    /// `(zero-based increasing indices, coefficient polynomial text in y1..yn)`.
    pub terms: Vec<(Vec<usize>, String)>,
}

impl TryFrom<PolyFormDoc> for PolyForm {
    type Error = FormsError;

    fn try_from(doc: PolyFormDoc) -> Result<Self, FormsError> {
        let mut form = PolyForm::new(doc.n, doc.degree)?;
        for (idx, text) in doc.terms {
            let expr = crate::jet::parse_expr(&text).map_err(|e| FormsError::InvalidForm(e.to_string()))?;
            let poly = expr
                .to_poly(doc.n)
                .ok_or_else(|| FormsError::InvalidForm(format!("coefficient `{text}` is not a polynomial in y1..y{}", doc.n)))?;
            form.add_term(&idx, poly)?;
        }
        Ok(form)
    }
}

impl From<&PolyForm> for PolyFormDoc {
    fn from(f: &PolyForm) -> Self {
        PolyFormDoc {
            n: f.n,
            degree: f.degree,
            terms: f.terms.iter().map(|(i, c)| (i.clone(), c.to_string())).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Branch pullbacks

/// `dλ/dx` along a track: central differences inside, second-order one-sided
/// differences at the ends.
pub fn track_derivatives(diag: &BranchDiagram, track: usize) -> Vec<Vec<f64>> {
    let n = diag.grid.len();
    let dim = diag.n;
    let g = &diag.grid;
    let l = |i: usize| diag.lambda(track, i);
    (0..n)
        .map(|i| {
            (0..dim)
                .map(|k| {
                    if n < 2 {
                        0.0
                    } else if n == 2 {
                        (l(1)[k] - l(0)[k]) / (g[1] - g[0])
                    } else if i == 0 {
                        (-3.0 * l(0)[k] + 4.0 * l(1)[k] - l(2)[k]) / (g[2] - g[0])
                    } else if i == n - 1 {
                        (3.0 * l(n - 1)[k] - 4.0 * l(n - 2)[k] + l(n - 3)[k]) / (g[n - 1] - g[n - 3])
                    } else {
                        (l(i + 1)[k] - l(i - 1)[k]) / (g[i + 1] - g[i - 1])
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchPullback {
    pub track: usize,
    /// Coefficient of the pulled-back form per grid sample (of `dx` for
    /// 1-forms, the function itself for 0-forms, zero above degree 1).
    pub coefficient: Vec<f64>,
    /// Size of the contributing terms before cancellation, per sample.
    pub magnitude: Vec<f64>,
}

/// Pulls `α` back along every track `x ↦ λ(x)`, ignoring multiplicities.
pub fn pullback_to_branches(alpha: &PolyForm, diag: &BranchDiagram) -> Result<Vec<BranchPullback>, FormsError> {
    if alpha.n != diag.n {
        return Err(FormsError::DimensionCondition {
            base: 1,
            target: diag.n,
            requirement: format!("form lives on R^{}", alpha.n),
        });
    }
    let g = diag.grid.len();
    Ok(diag
        .tracks
        .iter()
        .map(|tr| {
            let (coefficient, magnitude) = match alpha.degree {
                0 => (0..g)
                    .map(|i| {
                        let y = diag.lambda(tr.id, i);
                        (alpha.eval(y, &[]), alpha.magnitude(y, &[]))
                    })
                    .unzip(),
                1 => {
                    let dl = track_derivatives(diag, tr.id);
                    (0..g)
                        .map(|i| {
                            let y = diag.lambda(tr.id, i);
                            let v = std::slice::from_ref(&dl[i]);
                            (alpha.eval(y, v), alpha.magnitude(y, v))
                        })
                        .unzip()
                }
                _ => (vec![0.0; g], vec![0.0; g]),
            };
            BranchPullback { track: tr.id, coefficient, magnitude }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentVerdict {
    pub track: usize,
    pub start: f64,
    pub end: f64,
    pub residual: f64,
    pub pass: bool,
    /// Fitted special Lagrangian phase in `(−π/2, π/2]`.
    pub phase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptedReport {
    pub pass: bool,
    pub residual: f64,
    pub tolerance: f64,
    pub components: Vec<ComponentVerdict>,
    pub reason: Option<String>,
}

impl AdaptedReport {
    fn from_components(components: Vec<ComponentVerdict>, tolerance: f64) -> Self {
        let residual = components.iter().map(|c| c.residual).fold(0.0, f64::max);
        let pass = components.iter().all(|c| c.pass);
        AdaptedReport { pass, residual, tolerance, components, reason: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantPiece {
    pub track: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelativeDimReport {
    pub pass: bool,
    pub constant_pieces: Vec<ConstantPiece>,
}

/// A track frozen in every target coordinate over two consecutive grid
/// steps makes a fiber of the graph positive-dimensional.
pub fn check_relative_dim0(diag: &BranchDiagram) -> RelativeDimReport {
    let limit = diag.tol * diag.scale;
    let n = diag.grid.len();
    let mut pieces = Vec::new();
    for tr in &diag.tracks {
        let still = |i: usize| {
            diag.lambda(tr.id, i).iter().zip(diag.lambda(tr.id, i + 1)).all(|(a, b)| (a - b).abs() <= limit)
        };
        let mut i = 0;
        while i + 1 < n {
            if still(i) {
                let start = i;
                while i + 1 < n && still(i) {
                    i += 1;
                }
                if i - start >= 2 {
                    pieces.push(ConstantPiece { track: tr.id, start: diag.grid[start], end: diag.grid[i] });
                }
            } else {
                i += 1;
            }
        }
    }
    RelativeDimReport { pass: pieces.is_empty(), constant_pieces: pieces }
}

/// Grid samples of `track` inside `[start, end]`.
fn samples_in(diag: &BranchDiagram, start: f64, end: f64) -> Vec<usize> {
    (0..diag.grid.len()).filter(|&i| diag.grid[i] >= start && diag.grid[i] <= end).collect()
}

fn residual_components(
    diag: &BranchDiagram,
    pullbacks: &[BranchPullback],
    tol: f64,
) -> Vec<ComponentVerdict> {
    let mut out = Vec::new();
    for pb in pullbacks {
        for comp in &diag.components {
            let idx = samples_in(diag, comp.start, comp.end);
            let residual = idx.iter().map(|&i| pb.coefficient[i].abs()).fold(0.0, f64::max);
            let size = idx.iter().map(|&i| pb.magnitude[i]).fold(1.0, f64::max);
            out.push(ComponentVerdict {
                track: pb.track,
                start: comp.start,
                end: comp.end,
                residual,
                pass: residual < tol * size,
                phase: None,
            });
        }
    }
    out
}

/// Lagrangian test: `2·dim X = dim Y`, relative dimension zero, and the
/// pullback of `ω` vanishing on the reduced branches.
pub fn check_lagrangian(
    diag: &BranchDiagram,
    omega: &PolyForm,
    base_dim: usize,
    target_dim: usize,
) -> Result<AdaptedReport, FormsError> {
    if 2 * base_dim != target_dim {
        return Err(FormsError::DimensionCondition {
            base: base_dim,
            target: target_dim,
            requirement: "dim X = dim Y / 2".into(),
        });
    }
    if omega.degree != 2 {
        return Err(FormsError::InvalidForm("the symplectic form must be a 2-form".into()));
    }
    let pullbacks = pullback_to_branches(omega, diag)?;
    let mut report = AdaptedReport::from_components(residual_components(diag, &pullbacks, DEFAULT_FORM_TOL), DEFAULT_FORM_TOL);
    let rel = check_relative_dim0(diag);
    if !rel.pass {
        report.pass = false;
        report.reason = Some("relative dimension is not zero: a branch is constant on an interval".into());
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SlagConvention {
    /// `Im(e^{−iθ} Ω)` pulls back to zero.
    #[default]
    Im,
    /// `Re(e^{−iθ} Ω)` pulls back to zero.
    Re,
}

/// Phase in `(−π/2, π/2]`.
fn wrap_half_turn(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(PI);
    if t > PI / 2.0 {
        t -= PI;
    }
    t + 0.0
}

/// Minimizes `Σ (p_i cos θ + q_i sin θ)²` over `θ ∈ [0, π)`: a coarse grid,
/// golden-section polish, then the exact stationary point of the sinusoid.
fn fit_phase(pq: &[(f64, f64)]) -> f64 {
    let f = |t: f64| pq.iter().map(|&(p, q)| (p * t.cos() + q * t.sin()).powi(2)).sum::<f64>();
    let steps = 180;
    let step = PI / steps as f64;
    let best = (0..steps).map(|k| k as f64 * step).min_by(|&a, &b| f(a).total_cmp(&f(b))).unwrap_or(0.0);
    let (mut a, mut b) = (best - step, best + step);
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    while b - a > 1e-10 {
        let c = b - INV_PHI * (b - a);
        let d = a + INV_PHI * (b - a);
        if f(c) <= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let polished = 0.5 * (a + b);
    let (sa, sb, sc) = pq.iter().fold((0.0, 0.0, 0.0), |(x, y, z), &(p, q)| (x + p * p, y + q * q, z + p * q));
    // F = (A+B)/2 + (A−B)/2 cos 2θ + C sin 2θ is smallest where
    // (cos 2θ, sin 2θ) points against ((A−B)/2, C).
    let half = 0.5 * (sa - sb);
    if half.hypot(sc) == 0.0 {
        return polished;
    }
    let exact = 0.5 * (-sc).atan2(-half);
    let candidates = [exact, exact + PI, exact - PI];
    candidates
        .into_iter()
        .min_by(|x, y| (x - polished).abs().total_cmp(&(y - polished).abs()))
        .unwrap_or(polished)
}

/// Special Lagrangian test for branches in `C ≅ R²` with `Ω = dy¹ + i dy²`,
/// fitting one constant phase per track component.
pub fn check_slag(diag: &BranchDiagram, convention: SlagConvention) -> Result<AdaptedReport, FormsError> {
    if diag.n != 2 {
        return Err(FormsError::DimensionCondition {
            base: 1,
            target: diag.n,
            requirement: "special Lagrangian branches live in C^1 = R^2".into(),
        });
    }
    let mut comps = Vec::new();
    for tr in &diag.tracks {
        let dl = track_derivatives(diag, tr.id);
        for comp in &diag.components {
            let idx = samples_in(diag, comp.start, comp.end);
            if idx.is_empty() {
                continue;
            }
            let pq: Vec<(f64, f64)> = idx
                .iter()
                .map(|&i| {
                    let (a, b) = (dl[i][0], dl[i][1]);
                    match convention {
                        SlagConvention::Im => (b, -a),
                        SlagConvention::Re => (a, b),
                    }
                })
                .collect();
            let theta = fit_phase(&pq);
            let residual = pq.iter().map(|&(p, q)| (p * theta.cos() + q * theta.sin()).abs()).fold(0.0, f64::max);
            let size = pq.iter().map(|&(p, q)| p.hypot(q)).fold(1.0, f64::max);
            comps.push(ComponentVerdict {
                track: tr.id,
                start: comp.start,
                end: comp.end,
                residual,
                pass: residual < DEFAULT_FORM_TOL * size,
                phase: Some(wrap_half_turn(theta)),
            });
        }
    }
    Ok(AdaptedReport::from_components(comps, DEFAULT_FORM_TOL))
}

/// What a calibration form is restricted to.
#[derive(Debug, Clone, PartialEq)]
pub enum CalibrationInput<'a> {
    /// Reduced branches of a diagram over a one-dimensional base.
    Diagram(&'a BranchDiagram),
    /// The plane spanned by `vectors` at `point`.
    Plane { point: Vec<f64>, vectors: Vec<Vec<f64>> },
}

impl CalibrationInput<'_> {
    /// Plane spanned by coordinate directions (zero-based) at the origin.
    pub fn coordinate_plane(n: usize, dirs: &[usize]) -> CalibrationInput<'static> {
        let vectors = dirs
            .iter()
            .map(|&d| (0..n).map(|i| if i == d { 1.0 } else { 0.0 }).collect())
            .collect();
        CalibrationInput::Plane { point: vec![0.0; n], vectors }
    }
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Literal vanishing test: the restriction of `α` to the branch or plane is
/// zero. A form of degree above the base dimension passes trivially.
pub fn check_calibration_vanishing(
    input: &CalibrationInput,
    alpha: &PolyForm,
    expected_base_dim: usize,
) -> Result<AdaptedReport, FormsError> {
    match input {
        CalibrationInput::Diagram(diag) => {
            if expected_base_dim != 1 {
                return Err(FormsError::DimensionCondition {
                    base: 1,
                    target: diag.n,
                    requirement: format!("expected base dimension {expected_base_dim}"),
                });
            }
            let pullbacks = pullback_to_branches(alpha, diag)?;
            Ok(AdaptedReport::from_components(residual_components(diag, &pullbacks, DEFAULT_FORM_TOL), DEFAULT_FORM_TOL))
        }
        CalibrationInput::Plane { point, vectors } => {
            let k = vectors.len();
            if k != expected_base_dim || point.len() != alpha.n || vectors.iter().any(|v| v.len() != alpha.n) {
                return Err(FormsError::DimensionCondition {
                    base: k,
                    target: point.len(),
                    requirement: format!("a {expected_base_dim}-plane in R^{}", alpha.n),
                });
            }
            let mut residual: f64 = 0.0;
            let mut size: f64 = 1.0;
            if alpha.degree <= k {
                for sub in subsets(k, alpha.degree) {
                    let vs: Vec<Vec<f64>> = sub.iter().map(|&i| vectors[i].clone()).collect();
                    residual = residual.max(alpha.eval(point, &vs).abs());
                    size = size.max(alpha.magnitude(point, &vs));
                }
            }
            let pass = residual < DEFAULT_FORM_TOL * size;
            Ok(AdaptedReport {
                pass,
                residual,
                tolerance: DEFAULT_FORM_TOL,
                components: Vec::new(),
                reason: None,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Planar maps and holomorphicity

/// Matrix family over a planar domain with entries `Σ c_{ab} z^a z̄^b`;
/// split entrywise into real and imaginary parts it is a map to `R²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarMap {
    pub r: usize,
    /// Row-major; each entry lists `((a, b), [re, im])`.
    pub entries: Vec<Vec<((u32, u32), [f64; 2])>>,
    /// `[re_min, re_max, im_min, im_max]`.
    pub domain: [f64; 4],
    pub tol: f64,
}

impl PlanarMap {
    /// Scalar `1×1` map from `(a, b, coefficient)` terms.
    pub fn scalar(terms: &[((u32, u32), [f64; 2])], domain: [f64; 4]) -> Self {
        PlanarMap { r: 1, entries: vec![terms.to_vec()], domain, tol: DEFAULT_TOL }
    }

    pub fn eval(&self, z: Complex64) -> ComplexMatrix {
        let zb = z.conj();
        ComplexMatrix::from_fn(self.r, self.r, |i, j| {
            self.entries[i * self.r + j]
                .iter()
                .map(|&((a, b), [re, im])| Complex64::new(re, im) * z.powu(a) * zb.powu(b))
                .sum()
        })
    }

    /// Branch values `Re λ + i Im λ` of the joint spectrum at `z`.
    fn branches(&self, z: Complex64) -> Result<Vec<Complex64>, FormsError> {
        let m = self.eval(z);
        let re = m.map(|v| Complex64::new(v.re, 0.0));
        let im = m.map(|v| Complex64::new(v.im, 0.0));
        let bd = joint_block_decompose(&[re, im], self.tol).map_err(|e| FormsError::FiberNotAdmissible {
            re: z.re,
            im: z.im,
            reason: e.to_string(),
        })?;
        Ok(bd.block_points.iter().map(|p| Complex64::new(p[0], p[1])).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolomorphicReport {
    pub pass: bool,
    /// Largest `|∂λ/∂z̄|` over samples and branches.
    pub residual: f64,
    pub tolerance: f64,
    /// Largest `|∂λ/∂z|`, the scale the residual is judged against.
    pub gradient_scale: f64,
    pub samples: usize,
}

/// Cauchy–Riemann check by central differences of step `h` on a
/// `grid × grid` sample of the domain; each branch is continued to the
/// four neighbours by nearest value.
pub fn check_j_holomorphic(map: &PlanarMap, grid: usize, h: f64) -> Result<HolomorphicReport, FormsError> {
    if grid < 1 || !(h > 0.0) {
        return Err(FormsError::InvalidForm("grid and step must be positive".into()));
    }
    let [x0, x1, y0, y1] = map.domain;
    let coord = |lo: f64, hi: f64, k: usize| if grid == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * k as f64 / (grid - 1) as f64 };
    let nearest = |vals: &[Complex64], target: Complex64| {
        vals.iter().copied().min_by(|a, b| (a - target).norm().total_cmp(&(b - target).norm())).unwrap_or(target)
    };
    let mut residual: f64 = 0.0;
    let mut gradient: f64 = 0.0;
    let mut count = 0;
    for i in 0..grid {
        for j in 0..grid {
            let z = Complex64::new(coord(x0, x1, i), coord(y0, y1, j));
            let here = map.branches(z)?;
            let e = map.branches(z + h)?;
            let w = map.branches(z - h)?;
            let n = map.branches(z + Complex64::new(0.0, h))?;
            let s = map.branches(z - Complex64::new(0.0, h))?;
            for &lam in &here {
                let ds = (nearest(&e, lam) - nearest(&w, lam)) / (2.0 * h);
                let dt = (nearest(&n, lam) - nearest(&s, lam)) / (2.0 * h);
                let i_unit = Complex64::new(0.0, 1.0);
                residual = residual.max((0.5 * (ds + i_unit * dt)).norm());
                gradient = gradient.max((0.5 * (ds - i_unit * dt)).norm());
                count += 1;
            }
        }
    }
    let tolerance = DEFAULT_CR_TOL * gradient.max(1.0);
    Ok(HolomorphicReport { pass: residual < tolerance, residual, tolerance, gradient_scale: gradient, samples: count })
}
