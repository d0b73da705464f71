#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::PathBuf;
use std::process::Command;

use azumaya_cli::spec::{point_doc, point_map, OptionsDoc};
use azumaya_cli::{parse_spec, run, MapSpecDoc};
use azumaya_core::fixtures::CURVE_FIXTURES;
use azumaya_core::linalg::DEFAULT_TOL;
use azumaya_core::point::Smoothness;
use proptest::prelude::*;
use rand::RngExt;
use serde_json::Value;

fn call(args: &[&str]) -> (i32, String) {
    let mut full = vec!["azumaya"];
    full.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap())
}

fn scratch(name: &str, contents: &[u8]) -> PathBuf {
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn spec_path(name: &str) -> String {
    format!("{}/../../docs/specs/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn binary_reports_domain_failures_with_exit_one() {
    let out = Command::new(env!("CARGO_BIN_EXE_azumaya"))
        .args(["validate", "--spec", &spec_path("rotation-point.json")])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["reason"], "NonRealSpectrum");
}

#[test]
fn evaluating_a_coordinate_echoes_its_matrix() {
    let (code, out) = call(&["eval", "--spec", &spec_path("jordan-point.json"), "--f", "y1"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    let doc = parse_spec(&std::fs::read(spec_path("jordan-point.json")).unwrap()).unwrap();
    let want = &doc.point_map.unwrap().matrices[0];
    for (i, row) in want.iter().enumerate() {
        for (j, z) in row.iter().enumerate() {
            for part in 0..2 {
                let got = v["matrix"][i][j][part].as_f64().unwrap();
                assert!((got - z[part]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn three_string_example_is_classified() {
    let (code, out) = call(&["curve-classify", "--fixture", "example-5.2.6.c"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["label"], "single-nilpotent-order-2");
}

#[test]
fn csv_has_one_row_per_track_and_sample() {
    for grid in [16usize, 100] {
        let g = grid.to_string();
        let (code, out) = call(&["curve-analyze", "--fixture", "example-7.2.2-phi1", "--grid", &g, "--format", "csv"]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().count(), 1 + 3 * grid);
    }
}

#[test]
fn csv_is_independent_of_thread_count() {
    for name in CURVE_FIXTURES {
        let run_with = |threads: &str| call(&["curve-analyze", "--fixture", name, "--grid", "200", "--threads", threads, "--format", "csv"]);
        let (a, b) = (run_with("1"), run_with("6"));
        assert_eq!(a.0, 0, "{name}");
        assert_eq!(a.1, b.1, "{name}");
    }
}

#[test]
fn schema_errors_carry_a_pointer() {
    let path = scratch("bad-matrix.json", br#"{"version":"1","point_map":{"r":2,"n":1,"matrices":[[[[1,0]],[[0,0],[1,0]]]]}}"#);
    let (code, out) = call(&["validate", "--spec", path.to_str().unwrap()]);
    assert_eq!(code, 2);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["error"], "SchemaError");
    assert!(v["path"].as_str().unwrap().starts_with("/point_map/matrices/0"), "{v}");

    let path = scratch("bad-version.json", br#"{"version":"7","point_map":{"r":1,"n":1,"matrices":[[[[1,0]]]]}}"#);
    let (code, out) = call(&["validate", "--spec", path.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert_eq!(serde_json::from_str::<Value>(&out).unwrap()["error"], "VersionUnsupported");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn point_documents_round_trip(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let s = common::random_point_map(&mut rng, 4, 3, Smoothness::Infinite);
        let doc = MapSpecDoc {
            version: "1".into(),
            point_map: Some(point_doc(&s.map)),
            curve_map: None,
            planar_map: None,
            form: None,
            options: OptionsDoc::default(),
        };
        let text = azumaya_cli::spec::to_json(&doc);
        let back = parse_spec(text.as_bytes()).unwrap();
        prop_assert_eq!(&back, &doc);
        let map = point_map(back.point_map.as_ref().unwrap(), DEFAULT_TOL).unwrap();
        prop_assert_eq!(map.matrices(), s.map.matrices());
    }

    #[test]
    fn truncated_documents_are_rejected(cut in 0.0f64..1.0, which in 0usize..4) {
        let name = ["jordan-point.json", "three-lines-curve.json", "bidiagonal-family.json", "z-squared-planar.json"][which];
        let text = std::fs::read(spec_path(name)).unwrap();
        // strip trailing whitespace so every proper prefix is incomplete
        let end = text.iter().rposition(|b| !b.is_ascii_whitespace()).unwrap();
        let keep = ((end as f64) * cut) as usize;
        let path = scratch(&format!("truncated-{which}.json"), &text[..keep]);
        let (code, out) = call(&["validate", "--spec", path.to_str().unwrap()]);
        prop_assert_eq!(code, 2);
        let v: Value = serde_json::from_str(&out).unwrap();
        prop_assert!(v["error"] == "ParseError" || v["error"] == "SchemaError", "{}", v);
    }

    #[test]
    fn mutated_documents_never_crash(seed in any::<u64>(), which in 0usize..4) {
        let name = ["jordan-point.json", "three-lines-curve.json", "bidiagonal-family.json", "z-squared-planar.json"][which];
        let mut text = std::fs::read(spec_path(name)).unwrap();
        let mut rng = common::rng(seed);
        for _ in 0..rng.random_range(1..=4) {
            let at = rng.random_range(0..text.len());
            match rng.random_range(0..3) {
                0 => { text.remove(at); }
                1 => text.insert(at, b"{}[]\",:-e9x"[rng.random_range(0..11)]),
                _ => text[at] = rng.random_range(0..=255u8),
            }
        }
        let path = scratch(&format!("mutated-{which}.json"), &text);
        let (code, out) = call(&["validate", "--spec", path.to_str().unwrap()]);
        prop_assert!(matches!(code, 0..=2));
        let valid = parse_spec(&text).is_ok();
        if !valid {
            prop_assert_eq!(code, 2);
            prop_assert!(serde_json::from_str::<Value>(&out).is_ok());
        }
    }
}
