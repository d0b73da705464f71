//! Matrix-valued families over a one-dimensional base (interval or circle):
//! fiberwise spectral analysis, branch diagrams, characteristic polynomials,
//! branched-cover constructions, deformation families and induced
//! connections on the push-forward module.

mod analyze;
mod charpoly;
mod classify;
mod connection;
mod cover;
mod family;

use std::f64::consts::TAU;

use num::complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{ComplexMatrix, LinalgError, DEFAULT_TOL};
use crate::point::Smoothness;

pub use analyze::{
    analyze, analyze_with, AnalyzeOptions, Ambiguity, BranchDiagram, Component, ComponentTrack,
    Event, EventKind, Track, TrackSample, DEFAULT_GRID,
};
pub use charpoly::{characteristic_polynomials, CharPoly};
pub use classify::{classify, Classification, DiagramKind, IntervalLabel, Overlap, TrackProfile};
pub use connection::{
    pushforward_connection, BranchConnection, FilteredConnection, SimpleConnection,
};
pub use cover::{from_branched_cover, CoverBase};
pub use family::{builtin_family, evaluate_family, FamilySpec, BUILTIN_FAMILIES};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WvError {
    #[error("fiber at x = {x} is not admissible: {reason}")]
    FiberNotAdmissible { x: f64, reason: String },
    #[error("invalid curve map: {0}")]
    InvalidMap(String),
    #[error("entry is not polynomial in the base coordinate")]
    NotPolynomial,
    #[error("monodromy permutation of order {order} is incompatible with cover degree {degree}")]
    MonodromyMismatch { order: usize, degree: usize },
    #[error("push-forward connection hypotheses fail on track {track} over [{start}, {end}]: {reason}")]
    HypothesesNotMet { track: usize, start: f64, end: f64, reason: String },
    #[error("parameter t = {t} outside [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("grid needs at least {min} points, got {found}")]
    GridTooSmall { min: usize, found: usize },
    #[error("unknown fixture or family `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Scalar function of the base coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    /// Ascending coefficients `c_0 + c_1 x + …`.
    Poly(Vec<f64>),
    /// `Σ cos[k] cos(kx) + sin[k] sin(kx)`, with `sin[0]` ignored.
    Trig { cos: Vec<f64>, sin: Vec<f64> },
}

impl Entry {
    pub fn zero() -> Self {
        Entry::Poly(Vec::new())
    }

    pub fn constant(c: f64) -> Self {
        Entry::Poly(vec![c])
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Entry::Poly(c) => poly_eval(c, x),
            Entry::Trig { cos, sin } => {
                let mut acc = 0.0;
                for (k, &a) in cos.iter().enumerate() {
                    acc += a * (k as f64 * x).cos();
                }
                for (k, &b) in sin.iter().enumerate().skip(1) {
                    acc += b * (k as f64 * x).sin();
                }
                acc
            }
        }
    }

    pub fn as_poly(&self) -> Option<&[f64]> {
        match self {
            Entry::Poly(c) => Some(c),
            Entry::Trig { .. } => None,
        }
    }

    fn coefficients(&self) -> Box<dyn Iterator<Item = f64> + '_> {
        match self {
            Entry::Poly(c) => Box::new(c.iter().copied()),
            Entry::Trig { cos, sin } => Box::new(cos.iter().chain(sin).copied()),
        }
    }

    fn is_periodic(&self) -> bool {
        match self {
            Entry::Poly(c) => c.iter().skip(1).all(|&v| v == 0.0),
            Entry::Trig { .. } => true,
        }
    }
}

pub(crate) fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

/// `r×r` matrix of base functions, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFunction {
    pub r: usize,
    pub entries: Vec<Entry>,
}

impl MatrixFunction {
    pub fn zero(r: usize) -> Self {
        MatrixFunction { r, entries: vec![Entry::zero(); r * r] }
    }

    /// Polynomial matrix from `rows[i][j]` = ascending coefficients.
    pub fn from_polys(rows: Vec<Vec<Vec<f64>>>) -> Self {
        let r = rows.len();
        let entries = rows.into_iter().flatten().map(Entry::Poly).collect();
        MatrixFunction { r, entries }
    }

    /// Constant matrix plus `x` times another, both row-major.
    pub fn affine(r: usize, constant: &[f64], linear: &[f64]) -> Self {
        let entries = constant
            .iter()
            .zip(linear)
            .map(|(&a, &b)| Entry::Poly(if b == 0.0 { vec![a] } else { vec![a, b] }))
            .collect();
        MatrixFunction { r, entries }
    }

    pub fn entry(&self, i: usize, j: usize) -> &Entry {
        &self.entries[i * self.r + j]
    }

    pub fn eval(&self, x: f64) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.r, self.r, |i, j| Complex64::new(self.entry(i, j).eval(x), 0.0))
    }

    pub fn is_polynomial(&self) -> bool {
        self.entries.iter().all(|e| e.as_poly().is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveBase {
    Interval { start: f64, end: f64 },
    /// Angle coordinate in `[0, 2π)`.
    Circle,
}

impl CurveBase {
    pub fn interval(start: f64, end: f64) -> Self {
        CurveBase::Interval { start, end }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            CurveBase::Interval { start, end } => (start, end),
            CurveBase::Circle => (0.0, TAU),
        }
    }

    pub fn is_circle(&self) -> bool {
        matches!(self, CurveBase::Circle)
    }

    /// Uniform samples; the circle omits the endpoint that duplicates `0`.
    pub fn grid(&self, size: usize) -> Vec<f64> {
        match *self {
            CurveBase::Interval { start, end } => {
                let last = (size - 1) as f64;
                (0..size)
                    .map(|i| if i + 1 == size { end } else { start + (end - start) * i as f64 / last })
                    .collect()
            }
            CurveBase::Circle => (0..size).map(|i| TAU * i as f64 / size as f64).collect(),
        }
    }

    pub fn length(&self) -> f64 {
        let (a, b) = self.bounds();
        b - a
    }
}

/// A map from a one-dimensional Azumaya world-volume with trivialized
/// rank-`r` module to `R^n`: one matrix function per target coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCurveMap {
    pub base: CurveBase,
    pub r: usize,
    pub ms: Vec<MatrixFunction>,
    pub k: Smoothness,
    pub tol: f64,
}

impl MatrixCurveMap {
    pub fn new(base: CurveBase, ms: Vec<MatrixFunction>, k: Smoothness, tol: f64) -> Result<Self, WvError> {
        if ms.is_empty() {
            return Err(WvError::InvalidMap("at least one target coordinate is required".into()));
        }
        if !(tol.is_finite() && tol > 0.0) {
            return Err(WvError::InvalidMap(format!("tolerance {tol} must be positive")));
        }
        let r = ms[0].r;
        if r == 0 {
            return Err(WvError::InvalidMap("rank must be positive".into()));
        }
        for (i, m) in ms.iter().enumerate() {
            if m.r != r || m.entries.len() != r * r {
                return Err(WvError::InvalidMap(format!("matrix {i} is not {r}x{r}")));
            }
            if m.entries.iter().any(|e| e.coefficients().any(|c| !c.is_finite())) {
                return Err(WvError::InvalidMap(format!("matrix {i} has non-finite coefficients")));
            }
            if base.is_circle() && !m.entries.iter().all(Entry::is_periodic) {
                return Err(WvError::InvalidMap(format!(
                    "matrix {i} has non-periodic entries over the circle"
                )));
            }
        }
        if let CurveBase::Interval { start, end } = base {
            if !(start.is_finite() && end.is_finite() && start < end) {
                return Err(WvError::InvalidMap(format!("bad interval [{start}, {end}]")));
            }
        }
        Ok(MatrixCurveMap { base, r, ms, k, tol })
    }

    pub fn with_default_tol(base: CurveBase, ms: Vec<MatrixFunction>) -> Result<Self, WvError> {
        Self::new(base, ms, Smoothness::Infinite, DEFAULT_TOL)
    }

    pub fn dim(&self) -> usize {
        self.ms.len()
    }

    pub fn fiber(&self, x: f64) -> Vec<ComplexMatrix> {
        self.ms.iter().map(|m| m.eval(x)).collect()
    }

    pub fn is_polynomial(&self) -> bool {
        self.ms.iter().all(MatrixFunction::is_polynomial)
    }
}
