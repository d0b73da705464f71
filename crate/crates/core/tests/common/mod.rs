//! Random inputs shared by the property tests and the acceptance suite.
#![allow(dead_code)]

use azumaya_core::fixtures::{commuting_point_map, BlockSpec};
use azumaya_core::jet::MPoly;
use azumaya_core::linalg::{real_matrix, ComplexMatrix, DEFAULT_TOL};
use azumaya_core::point::{AzumayaPointMap, Smoothness};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn partition(rng: &mut ChaCha8Rng, total: usize) -> Vec<usize> {
    let mut parts = Vec::new();
    let mut left = total;
    while left > 0 {
        let p = rng.random_range(1..=left);
        parts.push(p);
        left -= p;
    }
    parts.sort_unstable_by(|a, b| b.cmp(a));
    parts
}

/// Blocks of total size `r` at distinct points of the half-integer lattice
/// in `[-2, 2]^n`, each with a random Jordan type and nilpotent parts.
pub fn random_blocks(rng: &mut ChaCha8Rng, r: usize, n: usize) -> Vec<BlockSpec> {
    let sizes = partition(rng, r);
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut blocks = Vec::new();
    for size in sizes {
        let point = loop {
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(-4..=4) as f64 * 0.5).collect();
            if !points.contains(&p) {
                break p;
            }
        };
        points.push(point.clone());
        let jordan = partition(rng, size);
        let depth = jordan[0].saturating_sub(1);
        let nilpotent = (0..n)
            .map(|axis| {
                (0..depth)
                    .map(|k| {
                        let c: f64 = rng.random_range(-1.0..1.0);
                        if axis == 0 && k == 0 {
                            c.signum() * (0.4 + 0.6 * c.abs())
                        } else {
                            c
                        }
                    })
                    .collect()
            })
            .collect();
        blocks.push(BlockSpec { point, jordan, nilpotent });
    }
    blocks
}

/// `I + 0.25·U`, `U` uniform in `[-1, 1]`: well conditioned for `r <= 5`.
pub fn random_conjugator(rng: &mut ChaCha8Rng, r: usize) -> ComplexMatrix {
    let data: Vec<f64> = (0..r * r)
        .map(|k| if k / r == k % r { 1.0 } else { 0.0 } + 0.25 * rng.random_range(-1.0..1.0))
        .collect();
    real_matrix(r, r, &data)
}

pub struct Sampled {
    pub map: AzumayaPointMap,
    pub blocks: Vec<BlockSpec>,
    pub conjugator: ComplexMatrix,
}

pub fn random_point_map(rng: &mut ChaCha8Rng, max_r: usize, max_n: usize, k: Smoothness) -> Sampled {
    let r = rng.random_range(1..=max_r);
    let n = rng.random_range(1..=max_n);
    let blocks = random_blocks(rng, r, n);
    let conjugator = random_conjugator(rng, r);
    let map = commuting_point_map(&blocks, Some(&conjugator), k, DEFAULT_TOL).expect("constructed map");
    Sampled { map, blocks, conjugator }
}

/// Dense random polynomial of total degree `<= degree`, coefficients in
/// `[-1, 1]`.
pub fn random_poly(rng: &mut ChaCha8Rng, n: usize, degree: u32) -> MPoly {
    let terms = azumaya_core::jet::multi_indices(n, degree)
        .into_iter()
        .map(|a| {
            let c: f64 = rng.random_range(-1.0..1.0);
            (a, c)
        })
        .collect::<Vec<_>>();
    MPoly::from_terms(n, terms)
}

pub fn frobenius(m: &ComplexMatrix) -> f64 {
    m.norm()
}
