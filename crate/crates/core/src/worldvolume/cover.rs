//! Push-forward of a trivial bundle along a branched cover of the base.

use serde::{Deserialize, Serialize};

use super::{CurveBase, Entry, MatrixCurveMap, MatrixFunction, WvError};
use crate::linalg::DEFAULT_TOL;
use crate::point::Smoothness;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverBase {
    /// Disjoint sheets over an interval; monodromy must be trivial.
    Interval { start: f64, end: f64 },
    /// Cover of the disc bounded by a circle of the given radius, branched
    /// over the origin. A cycle of length `c` in the monodromy is the
    /// component `w^c = z`; the result is sampled on the real segment
    /// `z ∈ [0, radius]`.
    Circle { radius: f64 },
}

fn poly_add_scaled(acc: &mut Vec<f64>, shift: usize, c: f64) {
    if acc.len() <= shift {
        acc.resize(shift + 1, 0.0);
    }
    acc[shift] += c;
}

fn cycles(perm: &[usize]) -> Result<Vec<Vec<usize>>, WvError> {
    let d = perm.len();
    let mut seen = vec![false; d];
    if perm.iter().any(|&p| p >= d) {
        return Err(WvError::MonodromyMismatch { order: d, degree: d });
    }
    let mut out = Vec::new();
    for start in 0..d {
        if seen[start] {
            continue;
        }
        let mut cyc = Vec::new();
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            cyc.push(i);
            i = perm[i];
        }
        if i != start {
            return Err(WvError::MonodromyMismatch { order: d, degree: d });
        }
        out.push(cyc);
    }
    Ok(out)
}

/// `f̂(W)` for the companion `W` of `w^c = z` in the basis `1, w, …, w^{c-1}`;
/// entries are polynomials in `z`.
fn companion_image(f: &[f64], c: usize) -> Vec<Vec<Vec<f64>>> {
    let mut out = vec![vec![Vec::new(); c]; c];
    for (j, &a) in f.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let (q, m) = (j / c, j % c);
        for k in 0..c {
            let row = (k + m) % c;
            let zpow = q + (k + m) / c;
            poly_add_scaled(&mut out[row][k], zpow, a);
        }
    }
    out
}

/// Builds the matrix family of `ĉ_* Ê` for a trivial rank-`bundle_rank`
/// bundle `Ê` on the cover.
///
/// `branches[s][i]` is the `i`-th target coordinate on sheet `s`, as
/// ascending coefficients in the cover coordinate (the base coordinate for
/// an interval). Sheets in one monodromy cycle form one connected component
/// and must carry the same functions.
pub fn from_branched_cover(
    branches: &[Vec<Vec<f64>>],
    monodromy: &[usize],
    base: CoverBase,
    bundle_rank: usize,
) -> Result<MatrixCurveMap, WvError> {
    let degree = branches.len();
    if degree == 0 || bundle_rank == 0 {
        return Err(WvError::InvalidMap("cover needs at least one sheet and positive rank".into()));
    }
    if monodromy.len() != degree {
        return Err(WvError::MonodromyMismatch { order: monodromy.len(), degree });
    }
    let n = branches[0].len();
    if n == 0 || branches.iter().any(|b| b.len() != n) {
        return Err(WvError::InvalidMap("every sheet needs the same number of coordinates".into()));
    }
    let cycles = cycles(monodromy)?;
    let (curve_base, twisted_ok) = match base {
        CoverBase::Interval { start, end } => (CurveBase::interval(start, end), false),
        CoverBase::Circle { radius } => (CurveBase::interval(0.0, radius), true),
    };
    if !twisted_ok && cycles.iter().any(|c| c.len() > 1) {
        let order = cycles.iter().map(Vec::len).max().unwrap_or(1);
        return Err(WvError::MonodromyMismatch { order, degree });
    }
    for cyc in &cycles {
        if cyc.iter().any(|&s| branches[s] != branches[cyc[0]]) {
            return Err(WvError::InvalidMap(format!(
                "sheets {cyc:?} share a component but carry different functions"
            )));
        }
    }

    let r = degree * bundle_rank;
    let mut ms = vec![MatrixFunction::zero(r); n];
    let mut offset = 0;
    for cyc in &cycles {
        let c = cyc.len();
        for (axis, m) in ms.iter_mut().enumerate() {
            let block = companion_image(&branches[cyc[0]][axis], c);
            for copy in 0..bundle_rank {
                let o = offset + copy * c;
                for (i, row) in block.iter().enumerate() {
                    for (k, p) in row.iter().enumerate() {
                        m.entries[(o + i) * r + o + k] = Entry::Poly(p.clone());
                    }
                }
            }
        }
        offset += c * bundle_rank;
    }
    MatrixCurveMap::new(curve_base, ms, Smoothness::Infinite, DEFAULT_TOL)
}
