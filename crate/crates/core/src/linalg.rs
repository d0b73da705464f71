//! Dense complex linear algebra shared by every other module: clustered
//! spectra of single matrices, the joint generalized-eigenspace splitting of
//! a commuting tuple, and the commutator diagnostic that decides whether a
//! tuple is a candidate at all.
//!
//! Eigenvalues come from a complex Schur form. Clusters are made contiguous
//! by adjacent Givens swaps and then decoupled by triangular Sylvester
//! solves, so each block of the returned basis spans an invariant subspace.

use std::cmp::Ordering;
use std::ops::Range;

use nalgebra::DMatrix;
use num::complex::Complex64;
use thiserror::Error;

/// Square (or rectangular, for bases) dense complex matrix.
pub type ComplexMatrix = DMatrix<Complex64>;

/// Default relative tolerance for clustering and admissibility verdicts.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Slack factor (in units of machine epsilon) for defect-aware merging.
const MERGE_SLACK: f64 = 1e4;

/// Bases whose condition number exceeds this are rejected.
const MAX_BASIS_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty input")]
    Empty,
    #[error("matrix has a non-finite entry")]
    NonFinite,
    #[error("tolerance must be positive and finite")]
    InvalidTolerance,
    #[error("matrices do not commute: defect {defect:.3e} exceeds {limit:.3e}")]
    NotCommuting { defect: f64, limit: f64 },
    #[error("non-real spectrum: eigenvalue {re:.6} {im:+.3e}i exceeds imaginary limit {limit:.3e}")]
    NonRealSpectrum { re: f64, im: f64, limit: f64 },
    #[error("generalized eigenvector basis is numerically singular (condition {condition:.3e})")]
    SingularBasis { condition: f64 },
}

/// `max(1, ‖m‖_F)`, the scale every threshold is measured against.
pub fn scale_of(m: &ComplexMatrix) -> f64 {
    m.norm().max(1.0)
}

/// Builds a complex matrix from real row-major data.
pub fn real_matrix(rows: usize, cols: usize, data: &[f64]) -> ComplexMatrix {
    assert_eq!(data.len(), rows * cols, "row-major data length");
    ComplexMatrix::from_fn(rows, cols, |i, j| Complex64::new(data[i * cols + j], 0.0))
}

pub fn identity(n: usize) -> ComplexMatrix {
    ComplexMatrix::identity(n, n)
}

pub fn commutator(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a * b - b * a
}

pub fn matrix_power(m: &ComplexMatrix, p: usize) -> ComplexMatrix {
    let mut out = identity(m.nrows());
    for _ in 0..p {
        out = &out * m;
    }
    out
}

fn check_square(m: &ComplexMatrix) -> Result<usize, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(m.nrows())
}

fn check_tuple(ms: &[ComplexMatrix]) -> Result<usize, LinalgError> {
    let first = ms.first().ok_or(LinalgError::Empty)?;
    let r = check_square(first)?;
    for m in &ms[1..] {
        let s = check_square(m)?;
        if s != r {
            return Err(LinalgError::DimensionMismatch { expected: r, found: s });
        }
    }
    Ok(r)
}

fn check_tol(tol: f64) -> Result<(), LinalgError> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(LinalgError::InvalidTolerance)
    }
}

/// Largest normalized commutator `‖[a,b]‖_F / (‖a‖_F ‖b‖_F)` over all pairs.
/// A pair containing a zero matrix contributes 0.
pub fn commutation_defect(ms: &[ComplexMatrix]) -> Result<f64, LinalgError> {
    check_tuple(ms)?;
    let norms: Vec<f64> = ms.iter().map(|m| m.norm()).collect();
    let mut worst: f64 = 0.0;
    for i in 0..ms.len() {
        for j in i + 1..ms.len() {
            let denom = norms[i] * norms[j];
            if denom == 0.0 {
                continue;
            }
            worst = worst.max(commutator(&ms[i], &ms[j]).norm() / denom);
        }
    }
    Ok(worst)
}

/// Singular values in descending order.
pub fn singular_values(m: &ComplexMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    sv
}

pub fn numerical_rank(m: &ComplexMatrix, threshold: f64) -> usize {
    singular_values(m).iter().filter(|&&s| s > threshold).count()
}

pub fn condition_number(m: &ComplexMatrix) -> f64 {
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

fn invert(m: &ComplexMatrix) -> Result<ComplexMatrix, LinalgError> {
    let condition = condition_number(m);
    if !condition.is_finite() || condition > MAX_BASIS_CONDITION {
        return Err(LinalgError::SingularBasis { condition });
    }
    m.clone()
        .try_inverse()
        .ok_or(LinalgError::SingularBasis { condition })
}

/// Orders complex numbers by real part, then imaginary part, treating
/// differences within `eps` as ties.
fn tolerant_cmp(a: &[f64], b: &[f64], eps: f64) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > eps {
            return x.partial_cmp(y).unwrap_or(Ordering::Equal);
        }
    }
    Ordering::Equal
}

// ---------------------------------------------------------------------------
// Schur machinery

/// `(cs, sn)` with `[cs sn; -conj(sn) cs] [f; g] = [r; 0]`, `cs` real.
fn givens(f: Complex64, g: Complex64) -> (f64, Complex64) {
    let fa = f.norm();
    let ga = g.norm();
    if ga == 0.0 {
        return (1.0, Complex64::new(0.0, 0.0));
    }
    if fa == 0.0 {
        return (0.0, g.conj() / ga);
    }
    let rn = fa.hypot(ga);
    (fa / rn, (f / fa) * g.conj() / rn)
}

/// Swaps the diagonal entries `k` and `k+1` of the upper-triangular `t`,
/// updating the unitary `q` so that `q t q^*` is unchanged.
fn swap_adjacent(t: &mut ComplexMatrix, q: &mut ComplexMatrix, k: usize) {
    let n = t.nrows();
    let t11 = t[(k, k)];
    let t22 = t[(k + 1, k + 1)];
    let (cs, sn) = givens(t[(k, k + 1)], t22 - t11);
    for j in k + 2..n {
        let x = t[(k, j)];
        let y = t[(k + 1, j)];
        t[(k, j)] = x * cs + sn * y;
        t[(k + 1, j)] = y * cs - sn.conj() * x;
    }
    for i in 0..k {
        let x = t[(i, k)];
        let y = t[(i, k + 1)];
        t[(i, k)] = x * cs + sn.conj() * y;
        t[(i, k + 1)] = y * cs - sn * x;
    }
    t[(k, k)] = t22;
    t[(k + 1, k + 1)] = t11;
    for i in 0..n {
        let x = q[(i, k)];
        let y = q[(i, k + 1)];
        q[(i, k)] = x * cs + sn.conj() * y;
        q[(i, k + 1)] = y * cs - sn * x;
    }
}

/// Solves `a x - x b = c` for upper-triangular `a` (s×s) and `b` (m×m).
fn solve_triangular_sylvester(
    a: &ComplexMatrix,
    b: &ComplexMatrix,
    c: &ComplexMatrix,
) -> ComplexMatrix {
    let s = a.nrows();
    let m = b.nrows();
    let mut x = ComplexMatrix::zeros(s, m);
    for j in 0..m {
        let mut rhs: Vec<Complex64> = (0..s).map(|i| c[(i, j)]).collect();
        for l in 0..j {
            let blj = b[(l, j)];
            if blj != Complex64::new(0.0, 0.0) {
                for (i, v) in rhs.iter_mut().enumerate() {
                    *v += x[(i, l)] * blj;
                }
            }
        }
        let shift = b[(j, j)];
        for i in (0..s).rev() {
            let mut acc = rhs[i];
            for l in i + 1..s {
                acc -= a[(i, l)] * x[(l, j)];
            }
            x[(i, j)] = acc / (a[(i, i)] - shift);
        }
    }
    x
}

fn is_upper_triangular(a: &ComplexMatrix) -> bool {
    (0..a.nrows()).all(|i| (0..i).all(|j| a[(i, j)] == Complex64::new(0.0, 0.0)))
}

/// Householder reflector `I - 2vv^*/|v|^2` for a fixed, dense `v`.
fn fixed_reflector(n: usize, seed: usize) -> ComplexMatrix {
    let v: Vec<Complex64> = (0..n)
        .map(|i| {
            let t = (i + 1) as f64 * (0.754_877_666 + seed as f64 * 0.569_840_291);
            Complex64::new(t.fract() + 0.25, (t * 1.618_033_988).fract() - 0.5)
        })
        .collect();
    let norm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    ComplexMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        Complex64::new(delta, 0.0) - v[i] * v[j].conj() * (2.0 / norm2)
    })
}

fn try_schur(a: &ComplexMatrix) -> Option<(ComplexMatrix, ComplexMatrix)> {
    let n = a.nrows();
    nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 200 * n.max(1)).map(|s| s.unpack())
}

/// Complex Schur form `a = q t q^*`. The QR iteration can stall on exactly
/// nilpotent input (e.g. a lower shift), so a failed attempt is retried
/// after a fixed unitary similarity.
fn schur_form(a: &ComplexMatrix) -> (ComplexMatrix, ComplexMatrix) {
    let n = a.nrows();
    if is_upper_triangular(a) {
        return (identity(n), a.clone());
    }
    let attempt = try_schur(a).or_else(|| {
        (0..4).find_map(|seed| {
            let h = fixed_reflector(n, seed);
            let (q, t) = try_schur(&(&h * a * &h))?;
            Some((&h * q, t))
        })
    });
    let (q, mut t) = attempt.unwrap_or_else(|| a.clone().schur().unpack());
    for i in 0..n {
        for j in 0..i {
            t[(i, j)] = Complex64::new(0.0, 0.0);
        }
    }
    (q, t)
}

fn merge_radius(p: usize, scale: f64) -> f64 {
    2.0 * scale * (MERGE_SLACK * f64::EPSILON).powf(1.0 / p as f64)
}

/// True when `(a - mu I)^p` has at least `p` singular values at rounding level.
fn has_nullity(a: &ComplexMatrix, mu: Complex64, p: usize, scale: f64) -> bool {
    let n = a.nrows();
    let shifted = a - identity(n) * mu;
    let pow = matrix_power(&shifted, p);
    let sv = singular_values(&pow);
    let threshold = MERGE_SLACK * p as f64 * f64::EPSILON * scale.powi(p as i32);
    sv.len() >= p && sv[n - p] <= threshold
}

fn mean(values: &[Complex64], members: &[usize]) -> Complex64 {
    let sum: Complex64 = members.iter().map(|&i| values[i]).sum();
    sum / members.len() as f64
}

/// Groups eigenvalues: single linkage at `tol*scale`, then pairwise merges of
/// clusters that are numerically one defective eigenvalue.
fn cluster_eigenvalues(
    a: &ComplexMatrix,
    eigs: &[Complex64],
    scale: f64,
    tol: f64,
) -> Vec<Vec<usize>> {
    let n = eigs.len();
    let tau = tol * scale;
    let mut label: Vec<usize> = (0..n).collect();
    fn find(label: &mut [usize], i: usize) -> usize {
        let mut root = i;
        while label[root] != root {
            root = label[root];
        }
        let mut cur = i;
        while label[cur] != root {
            let next = label[cur];
            label[cur] = root;
            cur = next;
        }
        root
    }
    for i in 0..n {
        for j in i + 1..n {
            if (eigs[i] - eigs[j]).norm() <= tau {
                let (ri, rj) = (find(&mut label, i), find(&mut label, j));
                if ri != rj {
                    label[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_of_group: Vec<usize> = Vec::new();
    for i in 0..n {
        let root = find(&mut label, i);
        match root_of_group.iter().position(|&r| r == root) {
            Some(g) => groups[g].push(i),
            None => {
                root_of_group.push(root);
                groups.push(vec![i]);
            }
        }
    }

    // Grow nested candidate sets around each cluster, nearest means first,
    // and merge the largest set that is numerically one defective eigenvalue.
    loop {
        let means: Vec<Complex64> = groups.iter().map(|g| mean(eigs, g)).collect();
        let mut best: Option<(usize, f64, Vec<usize>)> = None;
        for seed in 0..groups.len() {
            let mut others: Vec<(f64, usize)> = (0..groups.len())
                .filter(|&j| j != seed)
                .map(|j| ((means[j] - means[seed]).norm(), j))
                .collect();
            others.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
            let mut chosen = vec![seed];
            for &(_, j) in &others {
                chosen.push(j);
                let members: Vec<usize> =
                    chosen.iter().flat_map(|&g| groups[g].iter().copied()).collect();
                let p = members.len();
                let centre = mean(eigs, &members);
                let spread = chosen
                    .iter()
                    .map(|&g| (means[g] - centre).norm())
                    .fold(0.0, f64::max);
                if spread > merge_radius(p, scale) {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some((bp, bs, _)) => p > *bp || (p == *bp && spread < *bs),
                };
                if better && has_nullity(a, centre, p, scale) {
                    let mut set = chosen.clone();
                    set.sort_unstable();
                    best = Some((p, spread, set));
                }
            }
        }
        match best {
            Some((_, _, set)) => {
                let mut merged: Vec<usize> = Vec::new();
                for &g in set.iter().rev() {
                    merged.extend(groups.remove(g));
                }
                merged.sort_unstable();
                groups.push(merged);
                groups.sort_by_key(|g| g[0]);
            }
            None => break,
        }
    }
    groups
}

/// Splitting of one matrix into generalized eigenspaces.
struct SpectralSplit {
    sizes: Vec<usize>,
    values: Vec<Complex64>,
    basis: ComplexMatrix,
}

fn split_spectrum(a: &ComplexMatrix, scale: f64, tol: f64) -> SpectralSplit {
    let n = a.nrows();
    if n == 0 {
        return SpectralSplit { sizes: vec![], values: vec![], basis: identity(0) };
    }
    let (mut q, mut t) = schur_form(a);
    let eigs: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();
    let mut groups = cluster_eigenvalues(a, &eigs, scale, tol);
    if groups.len() == 1 {
        let value = a.trace() / n as f64;
        return SpectralSplit { sizes: vec![n], values: vec![value], basis: identity(n) };
    }
    let eps = tol * scale;
    groups.sort_by(|g, h| {
        let (mg, mh) = (mean(&eigs, g), mean(&eigs, h));
        tolerant_cmp(&[mg.re, mg.im], &[mh.re, mh.im], eps)
    });
    let mut rank_of = vec![0usize; n];
    for (g, members) in groups.iter().enumerate() {
        for &i in members {
            rank_of[i] = g;
        }
    }
    // Bubble the diagonal into cluster order.
    let mut order: Vec<usize> = (0..n).map(|i| rank_of[i]).collect();
    loop {
        let mut swapped = false;
        for k in 0..n - 1 {
            if order[k] > order[k + 1] {
                swap_adjacent(&mut t, &mut q, k);
                order.swap(k, k + 1);
                swapped = true;
            }
        }
        if !swapped {
            break;
        }
    }
    let sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
    let mut basis = q;
    let mut start = 0;
    for &sz in &sizes {
        let rest = n - start - sz;
        if rest == 0 {
            break;
        }
        let ta = t.view((start, start), (sz, sz)).into_owned();
        let tb = t.view((start + sz, start + sz), (rest, rest)).into_owned();
        let tc = t.view((start, start + sz), (sz, rest)).into_owned();
        let x = solve_triangular_sylvester(&ta, &tb, &(-tc));
        let update = basis.columns(start, sz) * &x;
        let mut tail = basis.columns_mut(start + sz, rest);
        tail += update;
        t.view_mut((start, start + sz), (sz, rest)).fill(Complex64::new(0.0, 0.0));
        start += sz;
    }
    let mut values = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &sz in &sizes {
        let tr: Complex64 = (start..start + sz).map(|i| t[(i, i)]).sum();
        values.push(tr / sz as f64);
        start += sz;
    }
    SpectralSplit { sizes, values, basis }
}

/// Smallest `p` with `‖n^p‖_F <= tol * scale^p`, capped at the block size.
pub fn nilpotent_index(n: &ComplexMatrix, scale: f64, tol: f64) -> usize {
    let k = n.nrows();
    let mut pow = identity(k);
    for p in 1..=k {
        pow = &pow * n;
        if pow.norm() <= tol * scale.powi(p as i32) {
            return p;
        }
    }
    k.max(1)
}

/// Jordan block sizes (descending) of a nilpotent matrix, read off the rank
/// sequence of its powers.
pub fn jordan_type(n: &ComplexMatrix, scale: f64, tol: f64) -> Vec<usize> {
    let k = n.nrows();
    let mut ranks = vec![k];
    let mut pow = identity(k);
    for p in 1..=k {
        pow = &pow * n;
        let rank = numerical_rank(&pow, tol * scale.powi(p as i32));
        ranks.push(rank.min(*ranks.last().unwrap_or(&k)));
        if rank == 0 {
            break;
        }
    }
    while ranks.len() <= k + 1 {
        ranks.push(0);
    }
    // at_least[j] = number of blocks of size >= j
    let at_least: Vec<usize> = (1..=k + 1).map(|j| ranks[j - 1] - ranks[j]).collect();
    let mut sizes = Vec::new();
    for j in (1..=k).rev() {
        let exactly = at_least[j - 1] - at_least.get(j).copied().unwrap_or(0);
        sizes.extend(std::iter::repeat_n(j, exactly));
    }
    sizes
}

/// All monomials `n_{i1} … n_{ij}` (multisets of axes) of degree `j`.
fn radical_monomials(gens: &[ComplexMatrix], degree: usize) -> Vec<ComplexMatrix> {
    let k = gens.first().map_or(0, |g| g.nrows());
    let mut out = Vec::new();
    fn rec(
        gens: &[ComplexMatrix],
        start: usize,
        left: usize,
        acc: ComplexMatrix,
        out: &mut Vec<ComplexMatrix>,
    ) {
        if left == 0 {
            out.push(acc);
            return;
        }
        for i in start..gens.len() {
            rec(gens, i, left - 1, &acc * &gens[i], out);
        }
    }
    rec(gens, 0, degree, identity(k), &mut out);
    out
}

/// Dimensions of `I^j E` for the ideal `I` generated by commuting nilpotent
/// `gens`, listed from the deepest nonzero power up to `E` itself.
pub fn radical_filtration(gens: &[ComplexMatrix], scale: f64, tol: f64) -> Vec<usize> {
    let k = gens.first().map_or(0, |g| g.nrows());
    if k == 0 {
        return Vec::new();
    }
    let mut dims = vec![k];
    for j in 1..=k {
        let monos = radical_monomials(gens, j);
        let threshold = tol * scale.powi(j as i32);
        let stacked = ComplexMatrix::from_fn(k, k * monos.len(), |row, col| {
            monos[col / k][(row, col % k)]
        });
        let rank = numerical_rank(&stacked, threshold);
        if rank == 0 {
            break;
        }
        dims.push(rank.min(*dims.last().unwrap_or(&k)));
    }
    dims.reverse();
    dims.dedup();
    dims
}

// ---------------------------------------------------------------------------
// Public decompositions

/// Clustered spectrum of one matrix.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub eigenvalues: Vec<Complex64>,
    pub multiplicities: Vec<usize>,
    /// Smallest `p` with `(m - λ)^p = 0` on each generalized eigenspace.
    pub nilpotent_indices: Vec<usize>,
    /// Columns grouped by eigenvalue, in the order of `eigenvalues`.
    pub basis_change: ComplexMatrix,
}

pub fn spectral_decompose(m: &ComplexMatrix, tol: f64) -> Result<SpectralData, LinalgError> {
    check_tol(tol)?;
    check_square(m)?;
    let scale = scale_of(m);
    let split = split_spectrum(m, scale, tol);
    let inverse = invert(&split.basis)?;
    let conj = &inverse * m * &split.basis;
    let mut nilpotent_indices = Vec::new();
    let mut start = 0;
    for (&sz, &value) in split.sizes.iter().zip(&split.values) {
        let block = conj.view((start, start), (sz, sz)).into_owned() - identity(sz) * value;
        nilpotent_indices.push(nilpotent_index(&block, scale, tol));
        start += sz;
    }
    Ok(SpectralData {
        eigenvalues: split.values,
        multiplicities: split.sizes,
        nilpotent_indices,
        basis_change: split.basis,
    })
}

/// Common refinement of the generalized eigenspaces of a commuting tuple.
#[derive(Debug, Clone)]
pub struct BlockDecomposition {
    pub block_sizes: Vec<usize>,
    /// Joint real eigenvalue tuple of each block, lexicographically ordered.
    pub block_points: Vec<Vec<f64>>,
    pub basis_change: ComplexMatrix,
    pub basis_inverse: ComplexMatrix,
    /// `blocks[l][i]`: the restriction of the `i`-th input matrix to block `l`.
    pub blocks: Vec<Vec<ComplexMatrix>>,
    /// Per-input `max(1, ‖m_i‖_F)`.
    pub scales: Vec<f64>,
    pub tol: f64,
}

impl BlockDecomposition {
    pub fn len(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.block_sizes.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    pub fn scale(&self) -> f64 {
        self.scales.iter().copied().fold(1.0, f64::max)
    }

    pub fn block_range(&self, l: usize) -> Range<usize> {
        let start: usize = self.block_sizes[..l].iter().sum();
        start..start + self.block_sizes[l]
    }

    /// `m_i - λ^i` restricted to block `l`, in the block basis.
    pub fn nilpotent_part(&self, l: usize, i: usize) -> ComplexMatrix {
        let k = self.block_sizes[l];
        &self.blocks[l][i] - identity(k) * Complex64::new(self.block_points[l][i], 0.0)
    }

    pub fn nilpotent_parts(&self, l: usize) -> Vec<ComplexMatrix> {
        (0..self.scales.len()).map(|i| self.nilpotent_part(l, i)).collect()
    }

    /// Per-axis nilpotency order on block `l`.
    pub fn nilpotency_orders(&self, l: usize) -> Vec<usize> {
        (0..self.scales.len())
            .map(|i| nilpotent_index(&self.nilpotent_part(l, i), self.scales[i], self.tol))
            .collect()
    }

    /// Dimensions of the powers of the joint nilpotent radical on block `l`.
    pub fn filtration(&self, l: usize) -> Vec<usize> {
        radical_filtration(&self.nilpotent_parts(l), self.scale(), self.tol)
    }

    /// Jordan type of a generic element of the nilpotent radical on block `l`.
    pub fn generic_jordan_type(&self, l: usize) -> Vec<usize> {
        let k = self.block_sizes[l];
        let mut generic = ComplexMatrix::zeros(k, k);
        let mut weight_sum = 0.0;
        for (i, n) in self.nilpotent_parts(l).iter().enumerate() {
            let w = 1.0 + 0.618_033_988_749_895 * i as f64;
            weight_sum += w;
            generic += n * Complex64::new(w, 0.0);
        }
        jordan_type(&generic, weight_sum.max(1.0) * self.scale(), self.tol)
    }

    /// Spectral projector onto block `l` in the original coordinates.
    pub fn projector(&self, l: usize) -> ComplexMatrix {
        let range = self.block_range(l);
        let cols = self.basis_change.columns(range.start, range.len());
        let rows = self.basis_inverse.rows(range.start, range.len());
        cols * rows
    }

    /// Largest off-block entry mass of `P^{-1} m P` over the given matrices.
    pub fn off_block_residual(&self, ms: &[ComplexMatrix]) -> f64 {
        let mut worst: f64 = 0.0;
        for m in ms {
            let mut conj = &self.basis_inverse * m * &self.basis_change;
            for l in 0..self.len() {
                let range = self.block_range(l);
                conj.view_mut((range.start, range.start), (range.len(), range.len()))
                    .fill(Complex64::new(0.0, 0.0));
            }
            worst = worst.max(conj.norm());
        }
        worst
    }
}

struct Piece {
    cols: ComplexMatrix,
    rows: ComplexMatrix,
}

/// Splits `C^r` into the joint generalized eigenspaces of a commuting tuple.
pub fn joint_block_decompose(
    ms: &[ComplexMatrix],
    tol: f64,
) -> Result<BlockDecomposition, LinalgError> {
    check_tol(tol)?;
    let r = check_tuple(ms)?;
    let scales: Vec<f64> = ms.iter().map(scale_of).collect();
    let scale = scales.iter().copied().fold(1.0, f64::max);
    let defect = commutation_defect(ms)?;
    if defect > tol * scale {
        return Err(LinalgError::NotCommuting { defect, limit: tol * scale });
    }

    let mut pieces = vec![Piece { cols: identity(r), rows: identity(r) }];
    for (m, &s) in ms.iter().zip(&scales) {
        let mut next = Vec::with_capacity(pieces.len());
        for piece in pieces {
            let restricted = &piece.rows * m * &piece.cols;
            let split = split_spectrum(&restricted, s, tol);
            for value in &split.values {
                if value.im.abs() > tol * s {
                    return Err(LinalgError::NonRealSpectrum {
                        re: value.re,
                        im: value.im,
                        limit: tol * s,
                    });
                }
            }
            if split.sizes.len() == 1 {
                next.push(piece);
                continue;
            }
            let inverse = invert(&split.basis)?;
            let mut start = 0;
            for &sz in &split.sizes {
                next.push(Piece {
                    cols: &piece.cols * split.basis.columns(start, sz),
                    rows: inverse.rows(start, sz) * &piece.rows,
                });
                start += sz;
            }
        }
        pieces = next;
    }

    let mut keyed: Vec<(Vec<f64>, Piece)> = pieces
        .into_iter()
        .map(|piece| {
            let k = piece.cols.ncols() as f64;
            let point = ms
                .iter()
                .map(|m| ((&piece.rows * m * &piece.cols).trace() / k).re)
                .collect();
            (point, piece)
        })
        .collect();
    keyed.sort_by(|a, b| tolerant_cmp(&a.0, &b.0, tol * scale));

    let block_sizes: Vec<usize> = keyed.iter().map(|(_, p)| p.cols.ncols()).collect();
    let mut basis_change = ComplexMatrix::zeros(r, r);
    let mut start = 0;
    for (_, piece) in &keyed {
        let k = piece.cols.ncols();
        basis_change.columns_mut(start, k).copy_from(&piece.cols);
        start += k;
    }
    let basis_inverse = invert(&basis_change)?;
    let conj: Vec<ComplexMatrix> = ms.iter().map(|m| &basis_inverse * m * &basis_change).collect();
    let mut blocks = Vec::with_capacity(keyed.len());
    let mut block_points = Vec::with_capacity(keyed.len());
    let mut start = 0;
    for (&k, (point, _)) in block_sizes.iter().zip(&keyed) {
        blocks.push(conj.iter().map(|c| c.view((start, start), (k, k)).into_owned()).collect());
        block_points.push(point.clone());
        start += k;
    }
    Ok(BlockDecomposition {
        block_sizes,
        block_points,
        basis_change,
        basis_inverse,
        blocks,
        scales,
        tol,
    })
}
