//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p azumaya-cli --test acceptance`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::f64::consts::FRAC_PI_4;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use azumaya_core::dga::{ad_rank, check_laws};
use azumaya_core::fixtures::{commuting_point_map, curve_fixture, curve_fixture_at, point_fixture, BlockSpec, CURVE_FIXTURES};
use azumaya_core::forms::{
    check_calibration_vanishing, check_j_holomorphic, check_slag, CalibrationInput, PlanarMap, PolyForm,
    SlagConvention,
};
use azumaya_core::jet::{Expr, FnSpec, MPoly};
use azumaya_core::linalg::{real_matrix, DEFAULT_TOL};
use azumaya_core::point::{
    c0_residual, evaluate, minimal_annihilator, pushforward_module, AzumayaPointMap, Smoothness,
};
use azumaya_core::worldvolume::{
    analyze, characteristic_polynomials, classify, pushforward_connection, CurveBase, Entry, MatrixCurveMap,
    MatrixFunction,
};
use num::{BigInt, BigRational, One, Zero};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: f64, detail: String) -> Verdict {
    let secs = elapsed.as_secs_f64();
    ensure(secs < limit, format!("{detail}; {secs:.2} s of {limit} s"))
}

// ---------------------------------------------------------------------------
// 1-3: evaluation of functions at matrix points

fn homomorphism() -> Verdict {
    let start = Instant::now();
    let mut rng = common::rng(1);
    let (mut worst_add, mut worst_mul) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let s = common::random_point_map(&mut rng, 5, 3, Smoothness::Infinite);
        let n = s.map.dim();
        for _ in 0..20 {
            let f = common::random_poly(&mut rng, n, 4);
            let g = common::random_poly(&mut rng, n, 4);
            let ev = |p: MPoly| evaluate(&s.map, &FnSpec::poly(p)).unwrap();
            let (ef, eg) = (ev(f.clone()), ev(g.clone()));
            let add = (&ev(&f + &g) - &ef - &eg).norm() / (ef.norm() + eg.norm()).max(1.0);
            let mul = (&ev(&f * &g) - &ef * &eg).norm() / (ef.norm() * eg.norm()).max(1.0);
            worst_add = worst_add.max(add);
            worst_mul = worst_mul.max(mul);
        }
    }
    let ok = worst_add <= 1e-12 && worst_mul <= 1e-9;
    let detail = format!("2000 pairs, additivity {worst_add:.1e}, multiplicativity {worst_mul:.1e}");
    if !ok {
        return Err(detail);
    }
    within(start.elapsed(), 10.0, detail)
}

fn poly_expr(p: &MPoly) -> Expr {
    p.terms().fold(Expr::Const(0.0), |acc, (e, c)| {
        let term = e.iter().enumerate().filter(|(_, &k)| k > 0).fold(Expr::Const(c), |t, (i, &k)| {
            Expr::Mul(Box::new(t), Box::new(Expr::Pow(Box::new(Expr::Var(i)), k)))
        });
        Expr::Add(Box::new(acc), Box::new(term))
    })
}

/// `g · Π_blocks (y_axis − λ_axis)^r`, kept unexpanded.
fn flat_on_support(rng: &mut ChaCha8Rng, s: &common::Sampled) -> FnSpec {
    let (n, r) = (s.map.dim(), s.map.rank());
    let mut h = poly_expr(&common::random_poly(rng, n, 2));
    for b in &s.blocks {
        let axis = rng.random_range(0..n);
        let factor = Expr::Sub(Box::new(Expr::Var(axis)), Box::new(Expr::Const(b.point[axis])));
        h = Expr::Mul(Box::new(h), Box::new(Expr::Pow(Box::new(factor), r as u32)));
    }
    FnSpec::Analytic { arity: n, expr: h }
}

fn locality() -> Verdict {
    let mut rng = common::rng(1);
    let maps: Vec<common::Sampled> =
        (0..100).map(|_| common::random_point_map(&mut rng, 5, 3, Smoothness::Infinite)).collect();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for s in &maps {
        for _ in 0..10 {
            let h = flat_on_support(&mut rng, s);
            worst = worst.max(evaluate(&s.map, &h).unwrap().norm());
        }
    }
    let detail = format!("1000 functions, max norm {worst:.1e}");
    if worst >= 1e-10 {
        return Err(detail);
    }
    within(start.elapsed(), 5.0, detail)
}

fn continuous_semantics() -> Verdict {
    let mut rng = common::rng(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let s = common::random_point_map(&mut rng, 5, 3, Smoothness::Finite(0));
        for _ in 0..10 {
            let f = FnSpec::poly(common::random_poly(&mut rng, s.map.dim(), 4));
            let value = evaluate(&s.map, &f).unwrap();
            worst = worst.max(c0_residual(&s.map, &f, &value).unwrap());
        }
    }
    ensure(worst < 1e-10, format!("500 evaluations, max residual {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 4: exact annihilators

fn quarter(k: i64) -> BigRational {
    BigRational::new(BigInt::from(k), BigInt::from(4))
}

/// `Π (y − λ)^e` over exact roots.
fn exact_product(factors: &[(BigRational, usize)]) -> Vec<BigRational> {
    let mut coeffs = vec![BigRational::one()];
    for (root, e) in factors {
        for _ in 0..*e {
            let mut next = vec![BigRational::zero(); coeffs.len() + 1];
            for (i, c) in coeffs.iter().enumerate() {
                next[i + 1] += c;
                next[i] -= root * c;
            }
            coeffs = next;
        }
    }
    coeffs
}

fn annihilators() -> Verdict {
    // the worked configuration: J_2(1) ⊕ J_1(1) ⊕ J_2(-1/2)
    let worked = minimal_annihilator(&point_fixture("example-3.1.1").unwrap(), 0).unwrap();
    let want = exact_product(&[(quarter(-2), 2), (quarter(4), 2)]);
    if worked.exact_coefficients(64) != Some(want) {
        return Err(format!("worked example gave {worked}"));
    }
    let mut rng = common::rng(4);
    let mut repeated = 0;
    for config in 0..20 {
        let r = rng.random_range(2..=6);
        let n = rng.random_range(1..=2);
        let blocks = common::random_blocks(&mut rng, r, n)
            .into_iter()
            .map(|b| {
                let nilpotent = (0..n)
                    .map(|_| {
                        if rng.random_range(0..3) == 0 {
                            Vec::new()
                        } else {
                            vec![[0.5, 1.0, 2.0][rng.random_range(0..3)], rng.random_range(-4..=4) as f64 * 0.25]
                        }
                    })
                    .collect();
                BlockSpec { nilpotent, ..b }
            })
            .collect::<Vec<_>>();
        // rational conjugator I + U/4 with U in {-1, 0, 1}
        let conj = loop {
            let data: Vec<f64> = (0..r * r)
                .map(|k| if k / r == k % r { 1.0 } else { 0.0 } + 0.25 * rng.random_range(-1..=1) as f64)
                .collect();
            let m = real_matrix(r, r, &data);
            if m.clone().try_inverse().is_some() {
                break m;
            }
        };
        let map = commuting_point_map(&blocks, Some(&conj), Smoothness::Infinite, DEFAULT_TOL).unwrap();
        for axis in 0..n {
            // root -> largest nilpotency order among blocks sitting over it
            let mut factors: Vec<(BigRational, usize)> = Vec::new();
            for b in &blocks {
                let root = quarter((b.point[axis] * 4.0).round() as i64);
                let order = if b.nilpotent[axis].is_empty() { 1 } else { b.jordan[0] };
                match factors.iter_mut().find(|f| f.0 == root) {
                    Some(f) => f.1 = f.1.max(order),
                    None => factors.push((root, order)),
                }
            }
            factors.sort();
            repeated += factors.iter().filter(|f| f.1 > 1).count();
            let want = exact_product(&factors);
            let got = minimal_annihilator(&map, axis).unwrap();
            if got.exact_coefficients(64) != Some(want) {
                return Err(format!("configuration {config}, axis {axis}: got {got}"));
            }
        }
    }
    Ok(format!("worked example and 20 random configurations agree coefficient-wise ({repeated} repeated factors)"))
}

// ---------------------------------------------------------------------------
// 5: differential graded algebra

fn dga_laws() -> Verdict {
    let start = Instant::now();
    let ranks: Vec<usize> = (2..=4).map(ad_rank).collect();
    if ranks != [3, 8, 15] {
        return Err(format!("ad ranks {ranks:?}"));
    }
    let mut parts = Vec::new();
    for r in [2, 3] {
        let rep = check_laws(r, 3);
        if !rep.pass {
            return Err(format!("r = {r}: {rep:?}"));
        }
        let mode = if rep.leibniz_exhaustive { "all pairs" } else { "covering set" };
        parts.push(format!(
            "r={r}: d^2 {} probes, Leibniz {} ({mode}), antisymmetry {}",
            rep.d_squared.probes, rep.leibniz.probes, rep.antisymmetry.probes
        ));
    }
    within(start.elapsed(), 5.0, format!("ad ranks 3/8/15; {}", parts.join("; ")))
}

// ---------------------------------------------------------------------------
// 6-9: curves

fn random_entries(rng: &mut ChaCha8Rng, r: usize) -> MatrixFunction {
    let degree = rng.random_range(0..=3);
    let entries = (0..r * r)
        .map(|_| Entry::Poly((0..=degree).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    MatrixFunction { r, entries }
}

fn cayley_hamilton() -> Verdict {
    let mut rng = common::rng(6);
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let r = rng.random_range(1..=4);
        let n = rng.random_range(1..=2);
        let ms = (0..n).map(|_| random_entries(&mut rng, r)).collect();
        let map = MatrixCurveMap::with_default_tol(CurveBase::interval(-1.0, 1.0), ms).unwrap();
        let polys = characteristic_polynomials(&map).unwrap();
        for x in map.base.grid(512) {
            for (cp, m) in polys.iter().zip(map.fiber(x)) {
                worst = worst.max(cp.eval_matrix(x, &m).norm());
            }
        }
    }
    ensure(worst < 1e-10, format!("30 maps on 512 points, max residual {worst:.1e}"))
}

fn three_strings() -> Verdict {
    let want = [
        ("example-5.2.6.a", "all-simple"),
        ("example-5.2.6.b", "mixed-simple-nilpotent(order 1)"),
        ("example-5.2.6.c", "single-nilpotent-order-2"),
    ];
    for (name, label) in want {
        let class = classify(&analyze(&curve_fixture(name).unwrap(), 512).unwrap());
        if class.label != label {
            return Err(format!("{name} labelled {}", class.label));
        }
    }
    let class = classify(&analyze(&curve_fixture("example-5.2.6.a").unwrap(), 512).unwrap());
    let mut crossings = class.crossings.clone();
    crossings.sort_by(f64::total_cmp);
    let ok = crossings.len() == 2 && (crossings[0] + 0.5).abs() < 1e-6 && (crossings[1] - 0.25).abs() < 1e-6;
    ensure(ok, format!("labels match, crossings at {crossings:?}"))
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn deformed_lines() -> Verdict {
    let start = Instant::now();
    let map = curve_fixture_at("example-7.2.2-phi1", Some(1.0)).unwrap();
    let diag = analyze(&map, 512).unwrap();
    let mut slopes: Vec<f64> = diag
        .tracks
        .iter()
        .map(|t| {
            let ys: Vec<f64> = t.samples.iter().map(|s| s.lambda[1]).collect();
            least_squares_slope(&diag.grid, &ys)
        })
        .collect();
    slopes.sort_by(f64::total_cmp);
    let slope_err = slopes.iter().zip([-1.0, 0.0, 1.0]).map(|(s, w)| (s - w).abs()).fold(0.0, f64::max);
    if slopes.len() != 3 || slope_err >= 1e-8 {
        return Err(format!("slopes {slopes:?}"));
    }
    let slag = check_slag(&diag, SlagConvention::Im).unwrap();
    let mut phases: Vec<f64> = slag.components.iter().filter_map(|c| c.phase).collect();
    phases.sort_by(f64::total_cmp);
    phases.dedup_by(|a, b| (*a - *b).abs() < 1e-8);
    let phase_err = phases.iter().zip([-FRAC_PI_4, 0.0, FRAC_PI_4]).map(|(p, w)| (p - w).abs()).fold(0.0, f64::max);
    if !slag.pass || slag.residual >= 1e-8 || phases.len() != 3 || phase_err >= 1e-8 {
        return Err(format!("sLag phases {phases:?}, residual {:.1e}", slag.residual));
    }
    let conn = pushforward_connection(&map, None, &diag).unwrap();
    let singular: Vec<f64> = conn.simple.iter().flat_map(|s| s.singular.iter().copied()).collect();
    if let Some(x) = singular.iter().find(|x| [-1.0, 0.0, 1.0].iter().all(|c| (*x - c).abs() > 1e-4)) {
        return Err(format!("singular point {x} away from the crossings"));
    }

    let expect = [
        ("example-7.2.2-phi1", "free rank-3"),
        ("example-7.2.2-phi2", "1 ⊕ filtered-2"),
        ("example-7.2.2-phi3", "1 ⊕ filtered-2"),
        ("example-7.2.2-phi4", "filtered-3"),
    ];
    let mut invariance = 0.0f64;
    for (name, summary) in expect {
        let limit = curve_fixture_at(name, Some(0.0)).unwrap();
        for x in [-1.5, 0.0, 0.7] {
            let fiber = AzumayaPointMap::new(limit.fiber(x), limit.k, limit.tol).unwrap();
            let module = pushforward_module(&fiber).unwrap();
            if module.fibers.len() != 1 || module.fibers[0].summary() != summary {
                let got: Vec<String> = module.fibers.iter().map(|f| f.summary()).collect();
                return Err(format!("{name} at t=0, x={x}: {got:?}"));
            }
            if name.ends_with("phi1") && !module.fibers[0].generators.is_empty() {
                return Err(format!("{name} at t=0 carries nilpotents"));
            }
            if name.ends_with("phi4") && module.fibers[0].filtration != [1, 2, 3] {
                return Err(format!("{name} filtration {:?}", module.fibers[0].filtration));
            }
        }
        if name.ends_with("phi4") {
            let diag = analyze(&limit, 512).unwrap();
            let conn = pushforward_connection(&limit, None, &diag).unwrap();
            invariance = conn.filtered.iter().flat_map(|f| f.invariance_residual.iter().copied()).fold(0.0, f64::max);
            if invariance >= 1e-9 {
                return Err(format!("filtration invariance residual {invariance:.1e}"));
            }
        }
    }
    within(
        start.elapsed(),
        10.0,
        format!("slope error {slope_err:.1e}, phase error {phase_err:.1e}, invariance {invariance:.1e}"),
    )
}

fn double_cover() -> Verdict {
    let map = curve_fixture("double-cover").unwrap();
    let polys = characteristic_polynomials(&map).unwrap();
    let mut terms: Vec<(Vec<u32>, f64)> = polys[0].poly.terms().map(|(e, c)| (e.clone(), c)).collect();
    terms.sort_by(|a, b| a.0.cmp(&b.0));
    // variable 0 is the base coordinate z, variable 1 the fiber coordinate y
    if polys.len() != 1 || terms != [(vec![0, 2], 1.0), (vec![1, 0], -1.0)] {
        return Err(format!("characteristic polynomial {}", polys[0]));
    }
    let diag = analyze(&map, 512).unwrap();
    if diag.tracks.len() != 2 {
        return Err(format!("{} tracks", diag.tracks.len()));
    }
    let mut worst = 0.0f64;
    for (i, &z) in diag.grid.iter().enumerate() {
        if z < 0.01 {
            continue;
        }
        let mut got: Vec<f64> = diag.tracks.iter().map(|t| t.samples[i].lambda[0]).collect();
        got.sort_by(f64::total_cmp);
        worst = worst.max((got[0] + z.sqrt()).abs()).max((got[1] - z.sqrt()).abs());
    }
    ensure(worst < 1e-9, format!("y^2 - z exactly, branch deviation {worst:.1e} for z >= 0.01"))
}

// ---------------------------------------------------------------------------
// 10-11

/// Triples (1-based) carrying a coefficient in the standard associative form.
const G2_TRIPLES: [[usize; 3]; 7] = [[1, 2, 3], [1, 4, 5], [1, 6, 7], [2, 4, 6], [2, 5, 7], [3, 4, 7], [3, 5, 6]];

fn calibrations() -> Verdict {
    let eta = PolyForm::standard_g2();
    let mut planes = 0;
    for a in 1..=7 {
        for b in a + 1..=7 {
            for c in b + 1..=7 {
                planes += 1;
                let vanishes = !G2_TRIPLES.contains(&[a, b, c]);
                let input = CalibrationInput::coordinate_plane(7, &[a - 1, b - 1, c - 1]);
                let rep = check_calibration_vanishing(&input, &eta, 3).unwrap();
                if rep.pass != vanishes {
                    return Err(format!("plane {a}{b}{c}: pass = {}", rep.pass));
                }
            }
        }
    }
    let dom = [-1.0, 1.0, -1.0, 1.0];
    let square = check_j_holomorphic(&PlanarMap::scalar(&[((2, 0), [1.0, 0.0])], dom), 21, 1e-4).unwrap();
    let conj = check_j_holomorphic(&PlanarMap::scalar(&[((0, 1), [1.0, 0.0])], dom), 21, 1e-4).unwrap();
    let ratio = conj.residual / square.residual.max(f64::MIN_POSITIVE);
    ensure(
        planes == 35 && square.pass && !conj.pass && ratio > 1e4,
        format!("{planes} planes agree; z^2 residual {:.1e}, conj residual {:.1e}", square.residual, conj.residual),
    )
}

fn determinism() -> Verdict {
    let csv = |name: &str, threads: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_azumaya"))
            .args(["curve-analyze", "--fixture", name, "--format", "csv", "--threads", threads])
            .output()
            .unwrap();
        (out.status.code(), out.stdout)
    };
    for name in CURVE_FIXTURES {
        let (one, many) = (csv(name, "1"), csv(name, "8"));
        if one.0 != Some(0) || one != many {
            return Err(format!("{name} differs or failed (exit {:?})", one.0));
        }
    }
    Ok(format!("{} fixtures byte-identical at 1 and 8 threads", CURVE_FIXTURES.len()))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("homomorphism laws", homomorphism),
        ("jet locality", locality),
        ("continuous semantics", continuous_semantics),
        ("exact annihilators", annihilators),
        ("differential graded algebra laws", dga_laws),
        ("characteristic polynomials annihilate", cayley_hamilton),
        ("three-string classification", three_strings),
        ("deformed three lines end to end", deformed_lines),
        ("branched double cover", double_cover),
        ("calibration and holomorphicity", calibrations),
        ("thread-count determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.2} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.2} s): {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
