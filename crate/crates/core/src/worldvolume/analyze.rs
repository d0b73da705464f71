//! Fiberwise decomposition, track continuation and event localization.

use rayon::prelude::*;
use serde::Serialize;

use super::{CurveBase, MatrixCurveMap, WvError};
use crate::linalg::{joint_block_decompose, BlockDecomposition, LinalgError};

pub const DEFAULT_GRID: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalyzeOptions {
    pub grid_size: usize,
    /// Worker count for fiberwise work; `None` uses the global default.
    pub threads: Option<usize>,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions { grid_size: DEFAULT_GRID, threads: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackSample {
    /// Joint eigenvalue of the block carrying the track.
    pub lambda: Vec<f64>,
    /// Index of that block in the fiber's lexicographic order.
    pub block: usize,
    pub block_length: usize,
    pub nilpotency_orders: Vec<usize>,
    pub filtration: Vec<usize>,
}

impl TrackSample {
    /// Joint nilpotency index of the block (1 when semisimple).
    pub fn nilpotency_order(&self) -> usize {
        self.filtration.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Track {
    pub id: usize,
    pub length: usize,
    pub samples: Vec<TrackSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum EventKind {
    /// Distinct tracks meet at an isolated point.
    Crossing,
    /// Tracks start to coincide over an interval.
    Merge,
    /// Coincident tracks separate.
    Split,
    /// Nilpotency data of a track changes without any meeting.
    ProfileChange,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub x: f64,
    pub kind: EventKind,
    pub tracks: Vec<usize>,
}

/// Grid point where two continuations tied; the lexicographically first
/// assignment was kept.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ambiguity {
    pub x: f64,
    pub tracks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentTrack {
    pub track: usize,
    pub length: usize,
    pub nilpotency_orders: Vec<usize>,
    pub filtration: Vec<usize>,
    /// Other tracks sharing the block inside this component.
    pub co_located: Vec<usize>,
}

/// Base interval between consecutive events.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Component {
    pub start: f64,
    pub end: f64,
    pub tracks: Vec<ComponentTrack>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchDiagram {
    pub base: CurveBase,
    pub r: usize,
    pub n: usize,
    pub tol: f64,
    pub scale: f64,
    pub grid: Vec<f64>,
    pub tracks: Vec<Track>,
    pub events: Vec<Event>,
    pub components: Vec<Component>,
    pub ambiguities: Vec<Ambiguity>,
    /// Circle base only: track reached by continuing each track once around.
    pub monodromy: Option<Vec<usize>>,
}

impl BranchDiagram {
    pub fn lambda(&self, track: usize, i: usize) -> &[f64] {
        &self.tracks[track].samples[i].lambda
    }

    pub fn co_located(&self, a: usize, b: usize, i: usize) -> bool {
        self.tracks[a].samples[i].block == self.tracks[b].samples[i].block
    }

    /// Track value at an arbitrary base point by linear interpolation.
    pub fn interpolate(&self, track: usize, x: f64) -> Vec<f64> {
        let (j, w) = bracket(&self.grid, x);
        let a = self.lambda(track, j);
        if w == 0.0 || j + 1 >= self.grid.len() {
            return a.to_vec();
        }
        let b = self.lambda(track, j + 1);
        a.iter().zip(b).map(|(p, q)| p + w * (q - p)).collect()
    }

    pub fn events_of(&self, track: usize) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.tracks.contains(&track))
    }

    pub fn grid_spacing(&self) -> f64 {
        if self.grid.len() < 2 {
            return self.base.length();
        }
        self.grid[1] - self.grid[0]
    }
}

/// Index `j` and weight `w` with `x ≈ grid[j] + w (grid[j+1] - grid[j])`.
pub(crate) fn bracket(grid: &[f64], x: f64) -> (usize, f64) {
    let n = grid.len();
    if n < 2 || x <= grid[0] {
        return (0, 0.0);
    }
    if x >= grid[n - 1] {
        return (n - 1, 0.0);
    }
    let j = grid.partition_point(|&g| g <= x) - 1;
    let w = (x - grid[j]) / (grid[j + 1] - grid[j]);
    (j, w)
}

#[derive(Debug, Clone)]
pub(crate) struct Fiber {
    pub points: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
    pub orders: Vec<Vec<usize>>,
    pub filtrations: Vec<Vec<usize>>,
    pub scale: f64,
}

impl Fiber {
    fn of(bd: &BlockDecomposition) -> Self {
        Fiber {
            points: bd.block_points.clone(),
            sizes: bd.block_sizes.clone(),
            orders: (0..bd.len()).map(|l| bd.nilpotency_orders(l)).collect(),
            filtrations: (0..bd.len()).map(|l| bd.filtration(l)).collect(),
            scale: bd.scale(),
        }
    }

    /// Points repeated by block length, each tagged with its block.
    fn slots(&self) -> Vec<(usize, &[f64])> {
        let mut out = Vec::new();
        for (l, (p, &k)) in self.points.iter().zip(&self.sizes).enumerate() {
            for _ in 0..k {
                out.push((l, p.as_slice()));
            }
        }
        out
    }
}

pub(crate) fn decompose_at(map: &MatrixCurveMap, x: f64) -> Result<BlockDecomposition, WvError> {
    joint_block_decompose(&map.fiber(x), map.tol).map_err(|e| WvError::FiberNotAdmissible {
        x,
        reason: match e {
            LinalgError::NotCommuting { defect, limit } => {
                format!("NotCommuting (defect {defect:e} > {limit:e})")
            }
            LinalgError::NonRealSpectrum { im, limit, .. } => {
                format!("NonRealSpectrum (|Im| {:e} > {limit:e})", im.abs())
            }
            other => other.to_string(),
        },
    })
}

fn fiber_at(map: &MatrixCurveMap, x: f64) -> Result<Fiber, WvError> {
    decompose_at(map, x).map(|bd| Fiber::of(&bd))
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

struct Assignment {
    blocks: Vec<usize>,
    tie: bool,
}

/// Length-respecting assignment of tracks to blocks minimizing the weighted
/// squared distance to the predictions; depth-first in lexicographic order so
/// the first optimum found is the lexicographically smallest.
fn assign(preds: &[Vec<f64>], lengths: &[usize], fiber: &Fiber, tie_eps: f64) -> Option<Assignment> {
    let t = preds.len();
    let b = fiber.sizes.len();
    let cost: Vec<Vec<f64>> = preds
        .iter()
        .zip(lengths)
        .map(|(p, &len)| fiber.points.iter().map(|q| len as f64 * dist2(p, q)).collect())
        .collect();
    let mut suffix = vec![0.0; t + 1];
    for i in (0..t).rev() {
        let min = cost[i].iter().copied().fold(f64::INFINITY, f64::min);
        suffix[i] = suffix[i + 1] + min;
    }

    struct Search<'a> {
        cost: &'a [Vec<f64>],
        suffix: &'a [f64],
        lengths: &'a [usize],
        cap: Vec<usize>,
        current: Vec<usize>,
        best: f64,
        best_blocks: Option<Vec<usize>>,
        tie: bool,
        tie_eps: f64,
        nblocks: usize,
    }

    impl Search<'_> {
        fn run(&mut self, i: usize, partial: f64) {
            if partial + self.suffix[i] > self.best + self.tie_eps {
                return;
            }
            if i == self.current.len() {
                if self.best_blocks.is_none() || partial < self.best - self.tie_eps {
                    self.best = partial;
                    self.best_blocks = Some(self.current.clone());
                    self.tie = false;
                } else {
                    self.tie = true;
                }
                return;
            }
            for blk in 0..self.nblocks {
                let len = self.lengths[i];
                if self.cap[blk] < len {
                    continue;
                }
                self.cap[blk] -= len;
                self.current[i] = blk;
                self.run(i + 1, partial + self.cost[i][blk]);
                self.cap[blk] += len;
            }
        }
    }

    let mut search = Search {
        cost: &cost,
        suffix: &suffix,
        lengths,
        cap: fiber.sizes.clone(),
        current: vec![0; t],
        best: f64::INFINITY,
        best_blocks: None,
        tie: false,
        tie_eps,
        nblocks: b,
    };
    search.run(0, 0.0);
    search.best_blocks.map(|blocks| Assignment { blocks, tie: search.tie })
}

fn extrapolate(x: f64, x1: f64, l1: &[f64], prev: Option<(f64, &[f64])>) -> Vec<f64> {
    match prev {
        Some((x2, l2)) if x1 != x2 => {
            let s = (x - x1) / (x1 - x2);
            l1.iter().zip(l2).map(|(a, b)| a + s * (a - b)).collect()
        }
        _ => l1.to_vec(),
    }
}

struct Continuation {
    assign: Vec<Vec<usize>>,
    ambiguities: Vec<Ambiguity>,
}

fn continue_tracks(
    fibers: &[Fiber],
    grid: &[f64],
    lengths: &[usize],
    seed: usize,
    seed_blocks: Vec<usize>,
    tie_eps: f64,
) -> Option<Continuation> {
    let n = grid.len();
    let t = lengths.len();
    let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); n];
    blocks[seed] = seed_blocks;
    let mut ambiguities = Vec::new();
    let lam = |blocks: &Vec<Vec<usize>>, j: usize, k: usize| fibers[j].points[blocks[j][k]].clone();

    let order: Vec<(usize, usize, Option<usize>)> = (seed + 1..n)
        .map(|i| (i, i - 1, (i >= seed + 2).then(|| i - 2)))
        .chain((0..seed).rev().map(|i| (i, i + 1, (i + 2 <= seed).then_some(i + 2))))
        .collect();
    for (i, p1, p2) in order {
        let preds: Vec<Vec<f64>> = (0..t)
            .map(|k| {
                let l1 = lam(&blocks, p1, k);
                let l2 = p2.map(|j| (grid[j], lam(&blocks, j, k)));
                extrapolate(grid[i], grid[p1], &l1, l2.as_ref().map(|(x, l)| (*x, l.as_slice())))
            })
            .collect();
        let a = assign(&preds, lengths, &fibers[i], tie_eps)?;
        if a.tie {
            ambiguities.push(Ambiguity { x: grid[i], tracks: (0..t).collect() });
        }
        blocks[i] = a.blocks;
    }
    Some(Continuation { assign: blocks, ambiguities })
}

pub fn analyze(map: &MatrixCurveMap, grid_size: usize) -> Result<BranchDiagram, WvError> {
    analyze_with(map, AnalyzeOptions { grid_size, threads: None })
}

pub fn analyze_with(map: &MatrixCurveMap, opts: AnalyzeOptions) -> Result<BranchDiagram, WvError> {
    let min = if map.base.is_circle() { 3 } else { 2 };
    if opts.grid_size < min {
        return Err(WvError::GridTooSmall { min, found: opts.grid_size });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| WvError::InvalidMap(format!("thread pool: {e}")))?;
    pool.install(|| analyze_in_pool(map, opts.grid_size))
}

fn analyze_in_pool(map: &MatrixCurveMap, grid_size: usize) -> Result<BranchDiagram, WvError> {
    let grid = map.base.grid(grid_size);
    let fibers: Vec<Fiber> = grid
        .par_iter()
        .map(|&x| fiber_at(map, x))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, _>>()?;
    let scale = fibers.iter().map(|f| f.scale).fold(1.0, f64::max);
    let tie_eps = (map.tol * scale).powi(2);

    // The finest fiber seeds the tracks; if some fiber cannot be covered by
    // those lengths, fall back to unit-length tracks.
    let seed = (0..grid.len())
        .max_by(|&a, &b| fibers[a].sizes.len().cmp(&fibers[b].sizes.len()).then(b.cmp(&a)))
        .unwrap_or(0);
    let seed_lengths = fibers[seed].sizes.clone();
    let seed_blocks: Vec<usize> = (0..seed_lengths.len()).collect();
    let (lengths, cont) =
        match continue_tracks(&fibers, &grid, &seed_lengths, seed, seed_blocks, tie_eps) {
            Some(c) => (seed_lengths, c),
            None => {
                let mut lengths = Vec::new();
                let mut blocks = Vec::new();
                for (l, &k) in fibers[seed].sizes.iter().enumerate() {
                    for _ in 0..k {
                        lengths.push(1);
                        blocks.push(l);
                    }
                }
                let c = continue_tracks(&fibers, &grid, &lengths, seed, blocks, tie_eps)
                    .expect("unit tracks always fit");
                (lengths, c)
            }
        };

    let tracks: Vec<Track> = lengths
        .iter()
        .enumerate()
        .map(|(id, &length)| Track {
            id,
            length,
            samples: (0..grid.len())
                .map(|i| {
                    let f = &fibers[i];
                    let blk = cont.assign[i][id];
                    TrackSample {
                        lambda: f.points[blk].clone(),
                        block: blk,
                        block_length: f.sizes[blk],
                        nilpotency_orders: f.orders[blk].clone(),
                        filtration: f.filtrations[blk].clone(),
                    }
                })
                .collect(),
        })
        .collect();

    let mut diagram = BranchDiagram {
        base: map.base,
        r: map.r,
        n: map.dim(),
        tol: map.tol,
        scale,
        grid,
        tracks,
        events: Vec::new(),
        components: Vec::new(),
        ambiguities: cont.ambiguities,
        monodromy: None,
    };
    if map.base.is_circle() {
        diagram.monodromy = circle_monodromy(&diagram, &fibers, tie_eps);
    }
    diagram.events = locate_events(map, &diagram);
    diagram.components = components(&diagram);
    Ok(diagram)
}

fn circle_monodromy(diag: &BranchDiagram, fibers: &[Fiber], tie_eps: f64) -> Option<Vec<usize>> {
    let n = diag.grid.len();
    let lengths: Vec<usize> = diag.tracks.iter().map(|t| t.length).collect();
    let preds: Vec<Vec<f64>> = (0..lengths.len())
        .map(|k| {
            extrapolate(
                std::f64::consts::TAU,
                diag.grid[n - 1],
                diag.lambda(k, n - 1),
                Some((diag.grid[n - 2], diag.lambda(k, n - 2))),
            )
        })
        .collect();
    let a = assign(&preds, &lengths, &fibers[0], tie_eps)?;
    let mut perm = Vec::with_capacity(lengths.len());
    for (k, &blk) in a.blocks.iter().enumerate() {
        let at_start: Vec<usize> =
            (0..lengths.len()).filter(|&j| diag.tracks[j].samples[0].block == blk).collect();
        if at_start.len() != 1 || lengths[at_start[0]] != lengths[k] {
            return None;
        }
        perm.push(at_start[0]);
    }
    Some(perm)
}

// ---------------------------------------------------------------------------
// Events

/// Pair of distinct slots best matching two predictions.
fn match_pair<'a>(
    fiber: &'a Fiber,
    pa: &[f64],
    pb: &[f64],
) -> Option<((usize, &'a [f64]), (usize, &'a [f64]))> {
    let slots = fiber.slots();
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..slots.len() {
        for j in 0..slots.len() {
            if i == j {
                continue;
            }
            let c = dist2(pa, slots[i].1) + dist2(pb, slots[j].1);
            if best.map_or(true, |(bc, _, _)| c < bc) {
                best = Some((c, i, j));
            }
        }
    }
    best.map(|(_, i, j)| (slots[i], slots[j]))
}

struct PairProbe<'a> {
    map: &'a MatrixCurveMap,
    diag: &'a BranchDiagram,
    a: usize,
    b: usize,
}

impl PairProbe<'_> {
    /// Signed difference of the two tracks at `x`, and whether they share a block.
    fn probe(&self, x: f64) -> Option<(Vec<f64>, bool)> {
        let fiber = fiber_at(self.map, x).ok()?;
        let pa = self.diag.interpolate(self.a, x);
        let pb = self.diag.interpolate(self.b, x);
        let ((la, qa), (lb, qb)) = match_pair(&fiber, &pa, &pb)?;
        Some((qa.iter().zip(qb).map(|(p, q)| p - q).collect(), la == lb))
    }

    fn distance(&self, x: f64) -> f64 {
        self.probe(x).map_or(f64::INFINITY, |(d, _)| d.iter().map(|v| v * v).sum::<f64>().sqrt())
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, xtol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > xtol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Lagrange interpolant through the given nodes, evaluated at `x`.
fn lagrange(nodes: &[(f64, Vec<f64>)], x: f64) -> Vec<f64> {
    let dim = nodes[0].1.len();
    let mut out = vec![0.0; dim];
    for (i, (xi, vi)) in nodes.iter().enumerate() {
        let mut w = 1.0;
        for (j, (xj, _)) in nodes.iter().enumerate() {
            if i != j {
                w *= (x - xj) / (xi - xj);
            }
        }
        for (o, v) in out.iter_mut().zip(vi) {
            *o += w * v;
        }
    }
    out
}

/// Locates the meeting of two tracks near `guess`. The block clustering
/// merges nearly equal eigenvalues, which flattens the distance near the
/// meeting; the final location comes from a cubic interpolant of the signed
/// difference sampled just outside that flat region.
fn refine_meeting(probe: &PairProbe, lo: f64, hi: f64, h: f64, limit: f64) -> Option<f64> {
    let xtol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    let (x0, d0) = golden_min(|x| probe.distance(x), lo, hi, xtol);
    if d0 > limit {
        return None;
    }
    let (base_lo, base_hi) = probe.diag.base.bounds();
    let offsets = [-0.3, -0.15, 0.15, 0.3];
    let mut nodes = Vec::with_capacity(4);
    for o in offsets {
        let x = x0 + o * h;
        if x < base_lo || x > base_hi {
            return Some(x0);
        }
        match probe.probe(x) {
            Some((d, false)) => nodes.push((x, d)),
            _ => return Some(x0),
        }
    }
    let norm = |x: f64| lagrange(&nodes, x).iter().map(|v| v * v).sum::<f64>().sqrt();
    let (x1, d1) = golden_min(norm, x0 - 0.15 * h, x0 + 0.15 * h, xtol);
    Some(if d1 <= limit { x1 } else { x0 })
}

/// Bisects for the point where `pred` flips between `lo` (false) and `hi`
/// (true); works for either ordering of the endpoints.
fn bisect(pred: impl Fn(f64) -> bool, mut lo: f64, mut hi: f64, xtol: f64) -> f64 {
    while (hi - lo).abs() > xtol {
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

enum Candidate {
    Meeting { a: usize, b: usize, i: usize },
    Boundary { a: usize, b: usize, inside: usize, outside: usize, kind: EventKind },
    AtGrid { x: f64, kind: EventKind, tracks: Vec<usize> },
    Profile { track: usize, i: usize },
}

fn profile_key(s: &TrackSample) -> (&[usize], &[usize]) {
    (&s.nilpotency_orders, &s.filtration)
}

fn locate_events(map: &MatrixCurveMap, diag: &BranchDiagram) -> Vec<Event> {
    let n = diag.grid.len();
    let t = diag.tracks.len();
    let h = diag.grid_spacing();
    let limit = 1e-6 * diag.scale;
    let xtol = 1e-9 * diag.base.length();
    let mut cands = Vec::new();

    for a in 0..t {
        for b in a + 1..t {
            let co: Vec<bool> = (0..n).map(|i| diag.co_located(a, b, i)).collect();
            let d: Vec<f64> = (0..n)
                .map(|i| dist2(diag.lambda(a, i), diag.lambda(b, i)).sqrt())
                .collect();
            let mut i = 0;
            while i < n {
                if co[i] {
                    let start = i;
                    while i + 1 < n && co[i + 1] {
                        i += 1;
                    }
                    let end = i;
                    if start == end {
                        if start > 0 && end + 1 < n {
                            cands.push(Candidate::Meeting { a, b, i: start });
                        } else {
                            cands.push(Candidate::AtGrid {
                                x: diag.grid[start],
                                kind: EventKind::Crossing,
                                tracks: vec![a, b],
                            });
                        }
                    } else {
                        if start > 0 {
                            cands.push(Candidate::Boundary {
                                a,
                                b,
                                inside: start,
                                outside: start - 1,
                                kind: EventKind::Merge,
                            });
                        }
                        if end + 1 < n {
                            cands.push(Candidate::Boundary {
                                a,
                                b,
                                inside: end,
                                outside: end + 1,
                                kind: EventKind::Split,
                            });
                        }
                    }
                } else if i > 0 && i + 1 < n && !co[i - 1] && !co[i + 1] {
                    let (l, m, r) = (d[i - 1], d[i], d[i + 1]);
                    let v_shaped = m <= 1.5 * (l - m).max(r - m) + limit;
                    if m < l && m <= r && v_shaped {
                        cands.push(Candidate::Meeting { a, b, i });
                    }
                }
                i += 1;
            }
        }
    }

    for (k, track) in diag.tracks.iter().enumerate() {
        let same_company = |i: usize, j: usize| {
            (0..t).all(|o| diag.co_located(k, o, i) == diag.co_located(k, o, j))
        };
        for i in 0..n.saturating_sub(1) {
            let (s0, s1) = (&track.samples[i], &track.samples[i + 1]);
            if profile_key(s0) == profile_key(s1) || !same_company(i, i + 1) {
                continue;
            }
            // An isolated deviating sample is an event at that grid point.
            if i + 2 < n && profile_key(&track.samples[i + 2]) == profile_key(s0) {
                cands.push(Candidate::AtGrid {
                    x: diag.grid[i + 1],
                    kind: EventKind::ProfileChange,
                    tracks: vec![k],
                });
                continue;
            }
            if i > 0 && profile_key(&track.samples[i - 1]) == profile_key(s1) {
                continue;
            }
            cands.push(Candidate::Profile { track: k, i });
        }
    }

    let found: Vec<Option<Event>> = cands
        .par_iter()
        .map(|c| match *c {
            Candidate::Meeting { a, b, i } => {
                let probe = PairProbe { map, diag, a, b };
                refine_meeting(&probe, diag.grid[i - 1], diag.grid[i + 1], h, limit)
                    .map(|x| Event { x, kind: EventKind::Crossing, tracks: vec![a, b] })
            }
            Candidate::Boundary { a, b, inside, outside, kind } => {
                let probe = PairProbe { map, diag, a, b };
                let x = bisect(
                    |x| probe.probe(x).is_some_and(|(_, same)| same),
                    diag.grid[outside],
                    diag.grid[inside],
                    xtol,
                );
                Some(Event { x, kind, tracks: vec![a, b] })
            }
            Candidate::AtGrid { x, kind, ref tracks } => Some(Event { x, kind, tracks: tracks.clone() }),
            Candidate::Profile { track, i } => {
                let key0 = profile_key(&diag.tracks[track].samples[i]);
                let same_as_left = |x: f64| {
                    let Ok(f) = fiber_at(map, x) else { return false };
                    let pred = diag.interpolate(track, x);
                    let blk = (0..f.points.len())
                        .min_by(|&p, &q| dist2(&f.points[p], &pred).total_cmp(&dist2(&f.points[q], &pred)));
                    blk.is_some_and(|l| (f.orders[l].as_slice(), f.filtrations[l].as_slice()) == key0)
                };
                let x = bisect(|x| !same_as_left(x), diag.grid[i], diag.grid[i + 1], xtol);
                Some(Event { x, kind: EventKind::ProfileChange, tracks: vec![track] })
            }
        })
        .collect();

    let mut events: Vec<Event> = found.into_iter().flatten().collect();
    events.sort_by(|p, q| {
        p.x.total_cmp(&q.x).then(p.kind.cmp(&q.kind)).then(p.tracks.cmp(&q.tracks))
    });
    let merge_dist = 1e-6 * diag.base.length();
    let mut out: Vec<Event> = Vec::with_capacity(events.len());
    for e in events {
        let dup = out.iter().any(|o| o.kind == e.kind && o.tracks == e.tracks && (o.x - e.x).abs() <= merge_dist);
        if !dup {
            out.push(e);
        }
    }
    out
}

fn components(diag: &BranchDiagram) -> Vec<Component> {
    let (lo, hi) = diag.base.bounds();
    let eps = 1e-9 * diag.base.length();
    let mut cuts: Vec<f64> = vec![lo];
    for e in &diag.events {
        if e.x > lo + eps && e.x < hi - eps && e.x - cuts[cuts.len() - 1] > eps {
            cuts.push(e.x);
        }
    }
    cuts.push(hi);
    cuts.windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let i = nearest_index(&diag.grid, mid);
            let tracks = diag
                .tracks
                .iter()
                .map(|tr| {
                    let s = &tr.samples[i];
                    ComponentTrack {
                        track: tr.id,
                        length: tr.length,
                        nilpotency_orders: s.nilpotency_orders.clone(),
                        filtration: s.filtration.clone(),
                        co_located: diag
                            .tracks
                            .iter()
                            .filter(|o| o.id != tr.id && o.samples[i].block == s.block)
                            .map(|o| o.id)
                            .collect(),
                    }
                })
                .collect();
            Component { start: w[0], end: w[1], tracks }
        })
        .collect()
}

pub(crate) fn nearest_index(grid: &[f64], x: f64) -> usize {
    (0..grid.len())
        .min_by(|&a, &b| (grid[a] - x).abs().total_cmp(&(grid[b] - x).abs()))
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldvolume::{Entry, MatrixFunction};

    fn diag_map(base: CurveBase, diagonals: Vec<Vec<Vec<f64>>>) -> MatrixCurveMap {
        let r = diagonals[0].len();
        let ms = diagonals
            .into_iter()
            .map(|d| {
                let mut m = MatrixFunction::zero(r);
                for (i, c) in d.into_iter().enumerate() {
                    m.entries[i * r + i] = Entry::Poly(c);
                }
                m
            })
            .collect();
        MatrixCurveMap::with_default_tol(base, ms).unwrap()
    }

    #[test]
    fn rank_one_parabola() {
        let map = diag_map(CurveBase::interval(-1.0, 1.0), vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 0.0, 1.0]]]);
        let d = analyze(&map, 65).unwrap();
        assert_eq!(d.tracks.len(), 1);
        assert!(d.events.is_empty());
        for (i, &x) in d.grid.iter().enumerate() {
            let l = d.lambda(0, i);
            assert!((l[0] - x).abs() < 1e-14 && (l[1] - x * x).abs() < 1e-14);
        }
    }

    #[test]
    fn transversal_crossing_is_localized() {
        // x and 0.3 - 2x cross at x = 0.1
        let map = diag_map(CurveBase::interval(-1.0, 1.0), vec![vec![vec![0.0, 1.0], vec![0.3, -2.0]]]);
        let d = analyze(&map, 100).unwrap();
        assert_eq!(d.tracks.len(), 2);
        assert_eq!(d.events.len(), 1);
        assert!((d.events[0].x - 0.1).abs() < 1e-9, "{:?}", d.events);
        // continuation follows each line through the crossing
        let first = d.tracks.iter().find(|t| (t.samples[0].lambda[0] + 1.0).abs() < 1e-12).unwrap();
        assert!((first.samples.last().unwrap().lambda[0] - 1.0).abs() < 1e-12);
        assert_eq!(d.components.len(), 2);
    }

    #[test]
    fn coincident_sections_form_one_track() {
        let map = diag_map(CurveBase::interval(0.0, 1.0), vec![vec![vec![0.0, 1.0], vec![0.0, 1.0]]]);
        let d = analyze(&map, 20).unwrap();
        assert_eq!(d.tracks.len(), 1);
        assert_eq!(d.tracks[0].length, 2);
        assert!(d.events.is_empty());
    }

    #[test]
    fn lengths_sum_to_rank_at_every_point() {
        let map = diag_map(
            CurveBase::interval(-2.0, 2.0),
            vec![vec![vec![0.0, -1.0], vec![1.0], vec![0.0, 1.0]]],
        );
        let d = analyze(&map, 64).unwrap();
        for i in 0..d.grid.len() {
            let mut seen = std::collections::BTreeMap::new();
            for t in &d.tracks {
                *seen.entry(t.samples[i].block).or_insert(0) += t.length;
                assert_eq!(seen[&t.samples[i].block] <= t.samples[i].block_length, true);
            }
            assert_eq!(seen.values().sum::<usize>(), 3);
        }
        let xs: Vec<f64> = d.events.iter().map(|e| e.x).collect();
        assert_eq!(xs.len(), 3);
        for (x, want) in xs.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((x - want).abs() < 1e-9);
        }
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let map = diag_map(
            CurveBase::interval(-1.0, 1.0),
            vec![vec![vec![0.0, -0.5, 0.0, 1.0], vec![-0.2, 0.0, 1.0], vec![0.1, 1.0]]],
        );
        let one = analyze_with(&map, AnalyzeOptions { grid_size: 200, threads: Some(1) }).unwrap();
        let many = analyze_with(&map, AnalyzeOptions { grid_size: 200, threads: Some(4) }).unwrap();
        assert_eq!(one, many);
    }

    #[test]
    fn non_real_fiber_is_reported_with_location() {
        let m = MatrixFunction::affine(2, &[0.0, -1.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0]);
        // [[0,-1],[x,0]] has real spectrum only for x <= 0.
        let map = MatrixCurveMap::with_default_tol(CurveBase::interval(-1.0, 1.0), vec![m]).unwrap();
        match analyze(&map, 11) {
            Err(WvError::FiberNotAdmissible { x, reason }) => {
                assert!(x > 0.0);
                assert!(reason.starts_with("NonRealSpectrum"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn circle_rotation_of_sheets_has_monodromy() {
        // diag(cos θ, -cos θ) swaps nothing; its monodromy is the identity.
        let c = Entry::Trig { cos: vec![0.0, 1.0], sin: vec![] };
        let mc = Entry::Trig { cos: vec![0.0, -1.0], sin: vec![] };
        let mut m = MatrixFunction::zero(2);
        m.entries[0] = c;
        m.entries[3] = mc;
        let map = MatrixCurveMap::with_default_tol(CurveBase::Circle, vec![m]).unwrap();
        let d = analyze(&map, 64).unwrap();
        assert_eq!(d.monodromy, Some(vec![0, 1]));
        assert_eq!(d.events.len(), 2);
    }
}
