//! Connections induced on the push-forward module by projecting a
//! connection `d + A(x)` on the trivial bundle onto the branch summands.

use num::complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use super::analyze::{decompose_at, BranchDiagram};
use super::{MatrixCurveMap, MatrixFunction, WvError};
use crate::jet::multi_indices;
use crate::linalg::{identity, matrix_power, BlockDecomposition, ComplexMatrix};

/// Connection 1-form `⟨e^i, (d + A) e_i⟩` along a simple track, in the
/// eigenframe normalized so its first non-vanishing coordinate is 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimpleConnection {
    pub track: usize,
    /// Per grid sample; `None` where the eigenline frame degenerates.
    pub omega: Vec<Option<[f64; 2]>>,
    pub singular: Vec<f64>,
    /// `exp(-∫ω)` over each component, integrated over regular samples.
    pub holonomy: Vec<ComponentHolonomy>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentHolonomy {
    pub start: f64,
    pub end: f64,
    pub value: [f64; 2],
}

/// Full connection matrix on a nonreduced track over one component, in a
/// frame adapted to the nilpotent filtration (deepest step first).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilteredConnection {
    pub track: usize,
    pub start: f64,
    pub end: f64,
    pub filtration: Vec<usize>,
    /// `(multi-index, basis column)` generating each frame vector.
    pub frame: Vec<(Vec<u32>, usize)>,
    pub samples: Vec<f64>,
    /// Row-major `[re, im]` connection matrices per sample.
    pub gamma: Vec<Vec<[f64; 2]>>,
    /// Worst failure of each filtration step to be preserved, over samples.
    pub invariance_residual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchConnection {
    pub simple: Vec<SimpleConnection>,
    pub filtered: Vec<FilteredConnection>,
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn nearest_block(bd: &BlockDecomposition, target: &[f64]) -> usize {
    let d = |l: usize| -> f64 { bd.block_points[l].iter().zip(target).map(|(p, q)| (p - q) * (p - q)).sum() };
    (0..bd.len()).min_by(|&a, &b| d(a).total_cmp(&d(b))).unwrap_or(0)
}

struct Sampler<'a> {
    map: &'a MatrixCurveMap,
    diag: &'a BranchDiagram,
    connection: Option<&'a MatrixFunction>,
    delta: f64,
}

impl Sampler<'_> {
    fn a(&self, x: f64) -> ComplexMatrix {
        self.connection.map_or_else(|| ComplexMatrix::zeros(self.map.r, self.map.r), |m| m.eval(x))
    }

    /// Right and left eigenvectors of a simple block, scaled so that
    /// coordinate `j` of the right one is 1.
    fn eigenpair(&self, x: f64, track: usize, j: Option<usize>) -> Option<(usize, ComplexMatrix, ComplexMatrix)> {
        let bd = decompose_at(self.map, x).ok()?;
        let l = nearest_block(&bd, &self.diag.interpolate(track, x));
        if bd.block_sizes[l] != 1 {
            return None;
        }
        let start = bd.block_range(l).start;
        let e = bd.basis_change.column(start).into_owned();
        let ei = bd.basis_inverse.row(start).into_owned();
        let biggest = e.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let j = match j {
            Some(j) => j,
            None => e.iter().position(|v| v.norm() > 1e-6 * biggest)?,
        };
        let pivot = e[j];
        if pivot.norm() <= 1e-6 * biggest {
            return None;
        }
        let right = ComplexMatrix::from_column_slice(e.len(), 1, (e / pivot).as_slice());
        let left = ComplexMatrix::from_row_slice(1, ei.len(), (ei * pivot).as_slice());
        Some((j, right, left))
    }

    fn omega(&self, x: f64, track: usize) -> Option<(usize, Complex64)> {
        let (j, e, ei) = self.eigenpair(x, track, None)?;
        if e.norm() * ei.norm() > 1e8 {
            return None;
        }
        let (_, ep, _) = self.eigenpair(x + self.delta, track, Some(j))?;
        let (_, em, _) = self.eigenpair(x - self.delta, track, Some(j))?;
        let de = (ep - em) / c(2.0 * self.delta);
        let v = de + self.a(x) * &e;
        Some((j, (ei * v)[(0, 0)]))
    }
}

fn simple_connection(s: &Sampler, track: usize) -> SimpleConnection {
    let diag = s.diag;
    let h = diag.grid_spacing();
    let values: Vec<Option<(usize, Complex64)>> =
        diag.grid.par_iter().map(|&x| s.omega(x, track)).collect();

    let mut singular: Vec<f64> = diag.events_of(track).map(|e| e.x).collect();
    let near_event = |x: f64| singular.iter().any(|&e| (e - x).abs() <= 2.0 * h);
    let mut extra = Vec::new();
    for (i, v) in values.iter().enumerate() {
        let x = diag.grid[i];
        match v {
            None if !near_event(x) => extra.push(x),
            Some((j, _)) if i > 0 => {
                if let Some((jp, _)) = values[i - 1] {
                    if jp != *j {
                        extra.push(0.5 * (x + diag.grid[i - 1]));
                    }
                }
            }
            _ => {}
        }
    }
    singular.extend(extra);
    singular.sort_by(f64::total_cmp);
    singular.dedup_by(|a, b| (*a - *b).abs() <= 1e-9);

    let holonomy = diag
        .components
        .iter()
        .map(|comp| {
            let mut integral = Complex64::new(0.0, 0.0);
            for i in 1..diag.grid.len() {
                let (x0, x1) = (diag.grid[i - 1], diag.grid[i]);
                if x0 < comp.start || x1 > comp.end {
                    continue;
                }
                if let (Some((_, w0)), Some((_, w1))) = (values[i - 1], values[i]) {
                    integral += (w0 + w1) * c(0.5 * (x1 - x0));
                }
            }
            let v = (-integral).exp();
            ComponentHolonomy { start: comp.start, end: comp.end, value: [v.re, v.im] }
        })
        .collect();

    SimpleConnection {
        track,
        omega: values.iter().map(|v| v.map(|(_, w)| [w.re, w.im])).collect(),
        singular,
        holonomy,
    }
}

/// Nilpotent parts `(m_i − λ^i) Π` of the block in original coordinates.
fn radical_in_place(ms: &[ComplexMatrix], bd: &BlockDecomposition, l: usize) -> (ComplexMatrix, Vec<ComplexMatrix>) {
    let pi = bd.projector(l);
    let r = pi.nrows();
    let ns = ms
        .iter()
        .zip(&bd.block_points[l])
        .map(|(m, &lam)| (m - identity(r) * c(lam)) * &pi)
        .collect();
    (pi, ns)
}

fn apply_word(ns: &[ComplexMatrix], alpha: &[u32], v: ComplexMatrix) -> ComplexMatrix {
    let mut out = v;
    for (n, &k) in ns.iter().zip(alpha) {
        if k > 0 {
            out = matrix_power(n, k as usize) * out;
        }
    }
    out
}

fn frame_at(ms: &[ComplexMatrix], bd: &BlockDecomposition, l: usize, choice: &[(Vec<u32>, usize)]) -> ComplexMatrix {
    let (pi, ns) = radical_in_place(ms, bd, l);
    let r = pi.nrows();
    let mut b = ComplexMatrix::zeros(r, choice.len());
    for (k, (alpha, col)) in choice.iter().enumerate() {
        let v = apply_word(&ns, alpha, pi.columns(*col, 1).into_owned());
        b.set_column(k, &v.column(0));
    }
    b
}

fn pinv(b: &ComplexMatrix) -> ComplexMatrix {
    let cutoff = 1e-12 * b.norm().max(f64::MIN_POSITIVE);
    b.clone().pseudo_inverse(cutoff).unwrap_or_else(|_| ComplexMatrix::zeros(b.ncols(), b.nrows()))
}

/// Norm of the part of `v` outside the column span of `basis`.
fn orth_residual(basis: &ComplexMatrix, v: &ComplexMatrix) -> f64 {
    if basis.ncols() == 0 {
        return v.norm();
    }
    (v - basis * (pinv(basis) * v)).norm()
}

/// Greedy choice of `N^α Π e_c` spanning each radical power, deepest first.
fn choose_frame(ms: &[ComplexMatrix], bd: &BlockDecomposition, l: usize, filtration: &[usize]) -> Option<Vec<(Vec<u32>, usize)>> {
    let (pi, ns) = radical_in_place(ms, bd, l);
    let r = pi.nrows();
    let n = ns.len();
    let p = filtration.len();
    let threshold = 1e-6 * bd.scale().max(pi.norm());
    let mut chosen: Vec<(Vec<u32>, usize)> = Vec::new();
    let mut basis = ComplexMatrix::zeros(r, 0);
    for (step, level) in (0..p).rev().enumerate() {
        let target = filtration[step];
        for alpha in multi_indices(n, level as u32).into_iter().filter(|a| a.iter().sum::<u32>() == level as u32) {
            for col in 0..r {
                if basis.ncols() >= target {
                    break;
                }
                let v = apply_word(&ns, &alpha, pi.columns(col, 1).into_owned());
                if orth_residual(&basis, &v) > threshold {
                    let k = basis.ncols();
                    basis = basis.insert_column(k, c(0.0));
                    basis.set_column(k, &v.column(0));
                    chosen.push((alpha.clone(), col));
                }
            }
        }
        if basis.ncols() != target {
            return None;
        }
    }
    Some(chosen)
}

fn filtered_connection(
    s: &Sampler,
    track: usize,
    start: f64,
    end: f64,
) -> Result<FilteredConnection, WvError> {
    let diag = s.diag;
    let tr = &diag.tracks[track];
    let h = diag.grid_spacing();
    let fail = |reason: String| WvError::HypothesesNotMet { track, start, end, reason };
    let event_near = |x: f64| diag.events_of(track).any(|e| (e.x - x).abs() <= 2.0 * h);

    let inside: Vec<usize> = (0..diag.grid.len())
        .filter(|&i| diag.grid[i] >= start && diag.grid[i] <= end)
        .filter(|&i| tr.samples[i].block_length == tr.length || !event_near(diag.grid[i]))
        .collect();
    if inside.is_empty() {
        return Err(fail("no regular samples".into()));
    }
    for &i in &inside {
        let smp = &tr.samples[i];
        if smp.block_length != tr.length {
            return Err(fail(format!("branch multiplicity jumps to {} at x = {}", smp.block_length, diag.grid[i])));
        }
    }
    let reference = inside[inside.len() / 2];
    let filtration = tr.samples[reference].filtration.clone();
    let orders = tr.samples[reference].nilpotency_orders.clone();
    for &i in &inside {
        let smp = &tr.samples[i];
        if (smp.filtration != filtration || smp.nilpotency_orders != orders) && !event_near(diag.grid[i]) {
            return Err(fail(format!("nilpotent filtration changes at x = {}", diag.grid[i])));
        }
    }

    let xr = diag.grid[reference];
    let bd = decompose_at(s.map, xr)?;
    let l = nearest_block(&bd, diag.lambda(track, reference));
    let choice = choose_frame(&s.map.fiber(xr), &bd, l, &filtration)
        .ok_or_else(|| fail("no filtration-adapted frame".into()))?;

    let frame = |x: f64| -> Result<ComplexMatrix, WvError> {
        let bd = decompose_at(s.map, x)?;
        let l = nearest_block(&bd, &diag.interpolate(track, x));
        if bd.block_sizes[l] != tr.length {
            return Err(fail(format!("block size changes near x = {x}")));
        }
        Ok(frame_at(&s.map.fiber(x), &bd, l, &choice))
    };

    let per_sample: Vec<Result<(ComplexMatrix, Vec<f64>), WvError>> = inside
        .par_iter()
        .map(|&i| {
            let x = diag.grid[i];
            let b = frame(x)?;
            let db = (frame(x + s.delta)? - frame(x - s.delta)?) / c(2.0 * s.delta);
            let bd = decompose_at(s.map, x)?;
            let pi = bd.projector(nearest_block(&bd, &diag.interpolate(track, x)));
            let moved = &pi * (db + s.a(x) * &b);
            let gamma = pinv(&b) * &moved;
            let norm = b.norm().max(1.0);
            let residuals = filtration
                .iter()
                .map(|&d| {
                    let sub = b.columns(0, d).into_owned();
                    orth_residual(&sub, &moved.columns(0, d).into_owned()) / norm
                })
                .collect();
            Ok((gamma, residuals))
        })
        .collect();

    let mut gamma = Vec::with_capacity(inside.len());
    let mut invariance_residual = vec![0.0f64; filtration.len()];
    for res in per_sample {
        let (g, rs) = res?;
        gamma.push(g.transpose().iter().map(|z| [z.re, z.im]).collect());
        for (acc, r) in invariance_residual.iter_mut().zip(rs) {
            *acc = acc.max(r);
        }
    }
    Ok(FilteredConnection {
        track,
        start,
        end,
        filtration,
        frame: choice,
        samples: inside.iter().map(|&i| diag.grid[i]).collect(),
        gamma,
        invariance_residual,
    })
}

/// Induced connection on every branch of `diag`. `connection` is the matrix
/// `A(x)` of `∇ = d + A`; `None` means the trivial connection.
pub fn pushforward_connection(
    map: &MatrixCurveMap,
    connection: Option<&MatrixFunction>,
    diag: &BranchDiagram,
) -> Result<BranchConnection, WvError> {
    if let Some(a) = connection {
        if a.r != map.r || a.entries.len() != map.r * map.r {
            return Err(WvError::InvalidMap(format!("connection matrix must be {0}x{0}", map.r)));
        }
    }
    let sampler = Sampler { map, diag, connection, delta: 1e-5 * diag.base.length() };
    let mut simple = Vec::new();
    let mut filtered = Vec::new();
    for tr in &diag.tracks {
        if tr.length == 1 {
            simple.push(simple_connection(&sampler, tr.id));
        } else {
            for comp in &diag.components {
                filtered.push(filtered_connection(&sampler, tr.id, comp.start, comp.end)?);
            }
        }
    }
    Ok(BranchConnection { simple, filtered })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::curve_fixture_at;
    use crate::worldvolume::{analyze, CurveBase, Entry};

    #[test]
    fn rank_one_is_trivial() {
        let m = MatrixFunction::from_polys(vec![vec![vec![0.3, 1.0, -2.0]]]);
        let map = MatrixCurveMap::with_default_tol(CurveBase::interval(-1.0, 1.0), vec![m]).unwrap();
        let d = analyze(&map, 33).unwrap();
        let bc = pushforward_connection(&map, None, &d).unwrap();
        assert_eq!(bc.simple.len(), 1);
        assert!(bc.simple[0].singular.is_empty());
        assert!(bc.simple[0].omega.iter().all(|w| *w == Some([0.0, 0.0])));
    }

    #[test]
    fn diagonal_family_is_exactly_flat() {
        let mut m = MatrixFunction::zero(2);
        m.entries[0] = Entry::Poly(vec![0.0, 1.0]);
        m.entries[3] = Entry::Poly(vec![1.0, 0.0, 1.0]);
        let map = MatrixCurveMap::with_default_tol(CurveBase::interval(0.2, 0.8), vec![m]).unwrap();
        let d = analyze(&map, 40).unwrap();
        let bc = pushforward_connection(&map, None, &d).unwrap();
        for sc in &bc.simple {
            assert!(sc.omega.iter().all(|w| *w == Some([0.0, 0.0])));
            assert!(sc.holonomy.iter().all(|h| h.value == [1.0, 0.0]));
        }
    }

    #[test]
    fn scalar_connection_gives_its_trace_part() {
        let mut m = MatrixFunction::zero(1);
        m.entries[0] = Entry::Poly(vec![0.0, 1.0]);
        let mut a = MatrixFunction::zero(1);
        a.entries[0] = Entry::Poly(vec![2.0]);
        let map = MatrixCurveMap::with_default_tol(CurveBase::interval(0.0, 1.0), vec![m]).unwrap();
        let d = analyze(&map, 11).unwrap();
        let bc = pushforward_connection(&map, Some(&a), &d).unwrap();
        assert!(bc.simple[0].omega.iter().all(|w| *w == Some([2.0, 0.0])));
        let hol = bc.simple[0].holonomy[0].value;
        assert!((hol[0] - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn three_lines_singular_only_at_crossings() {
        let map = curve_fixture_at("example-7.2.2-phi1", Some(1.0)).unwrap();
        let d = analyze(&map, 512).unwrap();
        let bc = pushforward_connection(&map, None, &d).unwrap();
        assert_eq!(bc.simple.len(), 3);
        for sc in &bc.simple {
            for x in &sc.singular {
                assert!([-1.0, 0.0, 1.0].iter().any(|p| (x - p).abs() < 1e-4), "{x}");
            }
            // flat away from the crossings, up to finite-difference error
            for (x, w) in d.grid.iter().zip(&sc.omega) {
                if [-1.0, 0.0, 1.0].iter().all(|p: &f64| (x - p).abs() > 0.05) {
                    let w = w.unwrap();
                    assert!(w[0].abs() < 1e-7 && w[1].abs() < 1e-7, "{x} {w:?}");
                }
            }
        }
    }

    #[test]
    fn shift_limit_preserves_filtration() {
        let map = curve_fixture_at("example-7.2.2-phi4", Some(0.0)).unwrap();
        let d = analyze(&map, 64).unwrap();
        let bc = pushforward_connection(&map, None, &d).unwrap();
        assert_eq!(bc.filtered.len(), 1);
        let fc = &bc.filtered[0];
        assert_eq!(fc.filtration, vec![1, 2, 3]);
        assert!(fc.invariance_residual.iter().all(|&r| r < 1e-9), "{:?}", fc.invariance_residual);
    }

    #[test]
    fn profile_change_splits_components() {
        // [[0, 0], [x, 0]] is a cloud of order 1 except at the origin.
        let mut m = MatrixFunction::zero(2);
        m.entries[2] = Entry::Poly(vec![0.0, 1.0]);
        let map = MatrixCurveMap::with_default_tol(CurveBase::interval(-1.0, 1.0), vec![m]).unwrap();
        let d = analyze(&map, 21).unwrap();
        assert_eq!(d.tracks.len(), 1);
        assert_eq!(d.events.len(), 1);
        let bc = pushforward_connection(&map, None, &d).unwrap();
        assert_eq!(bc.filtered.len(), 2);
        for fc in &bc.filtered {
            assert_eq!(fc.filtration, vec![1, 2]);
        }
    }

    #[test]
    fn multiplicity_jump_is_refused() {
        let map = curve_fixture_at("example-5.2.6.c", None).unwrap();
        let mut d = analyze(&map, 41).unwrap();
        d.tracks[0].samples[10].block_length = 2;
        let sampler = Sampler { map: &map, diag: &d, connection: None, delta: 1e-5 };
        let err = filtered_connection(&sampler, 0, -1.0, 1.0).unwrap_err();
        assert!(matches!(err, WvError::HypothesesNotMet { track: 0, .. }));
    }
}
