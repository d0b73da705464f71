//! JSON map specifications: parsing with JSON-pointer error paths,
//! validation, and conversion to the core map types.

use azumaya_core::forms::{PlanarMap, PolyForm, PolyFormDoc, SlagConvention};
use azumaya_core::linalg::ComplexMatrix;
use azumaya_core::point::{AzumayaPointMap, Smoothness};
use azumaya_core::worldvolume::{evaluate_family, CurveBase, Entry, FamilySpec, MatrixCurveMap, MatrixFunction};
use num::complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SUPPORTED_VERSIONS: [&str; 2] = ["1", "1.0"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("unsupported spec version `{0}`")]
    VersionUnsupported(String),
}

impl SpecError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        SpecError::Schema { path: path.into(), message: message.into() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SpecError::Parse(_) => "ParseError",
            SpecError::Schema { .. } => "SchemaError",
            SpecError::VersionUnsupported(_) => "VersionUnsupported",
        }
    }
}

fn inf() -> Smoothness {
    Smoothness::Infinite
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpecDoc {
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_map: Option<PointMapDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve_map: Option<CurveMapDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planar_map: Option<PlanarMap>,
    /// Differential form for the adapted-map checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<PolyFormDoc>,
    #[serde(default)]
    pub options: OptionsDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMapDoc {
    pub r: usize,
    pub n: usize,
    #[serde(default = "inf")]
    pub k: Smoothness,
    /// `matrices[axis][row][col] = [re, im]`.
    pub matrices: Vec<Vec<Vec<[f64; 2]>>>,
}

/// A polynomial in `x` (ascending coefficients), a table `[a][b]` of
/// coefficients of `x^a t^b` for families, or a trigonometric series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EntryDoc {
    Poly(Vec<f64>),
    Table(Vec<Vec<f64>>),
    Trig { cos: Vec<f64>, sin: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveMapDoc {
    pub base: CurveBase,
    pub r: usize,
    pub n: usize,
    #[serde(default = "inf")]
    pub k: Smoothness,
    /// `entries[axis][row][col]`.
    pub entries: Vec<Vec<Vec<EntryDoc>>>,
    /// Parameter range; required when any entry is a table in `(x, t)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_range: Option<(f64, f64)>,
    /// Connection matrix `A(x)` of the trivialized module, `[row][col]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connection: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slag_convention: Option<SlagConvention>,
}

pub fn parse_spec(document: &[u8]) -> Result<MapSpecDoc, SpecError> {
    let text = std::str::from_utf8(document).map_err(|e| SpecError::Parse(format!("invalid UTF-8: {e}")))?;
    let mut de = serde_json::Deserializer::from_str(text);
    let doc: MapSpecDoc = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = pointer(&e.path().to_string());
        let inner = e.into_inner();
        match inner.classify() {
            serde_json::error::Category::Data => SpecError::schema(path, inner.to_string()),
            _ => SpecError::Parse(inner.to_string()),
        }
    })?;
    de.end().map_err(|e| SpecError::Parse(e.to_string()))?;
    validate(&doc)?;
    Ok(doc)
}

pub fn to_json(doc: &MapSpecDoc) -> String {
    serde_json::to_string_pretty(doc).expect("spec documents always serialize")
}

/// `a.b[0].c` → `/a/b/0/c`.
fn pointer(dotted: &str) -> String {
    if dotted == "." || dotted.is_empty() {
        return String::new();
    }
    let mut out = String::new();
    for part in dotted.split('.') {
        let mut rest = part;
        if let Some(i) = rest.find('[') {
            if i > 0 {
                out.push('/');
                out.push_str(&rest[..i]);
            }
            rest = &rest[i..];
            while let Some(stripped) = rest.strip_prefix('[') {
                let close = stripped.find(']').unwrap_or(stripped.len());
                out.push('/');
                out.push_str(&stripped[..close]);
                rest = stripped.get(close + 1..).unwrap_or("");
            }
        } else if !rest.is_empty() && rest != "?" {
            out.push('/');
            out.push_str(rest);
        }
    }
    out
}

fn finite(values: impl IntoIterator<Item = f64>) -> bool {
    values.into_iter().all(f64::is_finite)
}

fn validate(doc: &MapSpecDoc) -> Result<(), SpecError> {
    if !SUPPORTED_VERSIONS.contains(&doc.version.as_str()) {
        return Err(SpecError::VersionUnsupported(doc.version.clone()));
    }
    let present = [doc.point_map.is_some(), doc.curve_map.is_some(), doc.planar_map.is_some()];
    if present.iter().filter(|&&p| p).count() != 1 {
        return Err(SpecError::schema("", "exactly one of point_map, curve_map, planar_map is required"));
    }
    if let Some(tol) = doc.options.tol {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(SpecError::schema("/options/tol", "tolerance must be positive"));
        }
    }
    if let Some(g) = doc.options.grid_size {
        if !(2..=crate::MAX_GRID).contains(&g) {
            return Err(SpecError::schema("/options/grid_size", format!("grid size must lie in [2, {}]", crate::MAX_GRID)));
        }
    }
    if let Some(p) = &doc.point_map {
        validate_point(p)?;
    }
    if let Some(c) = &doc.curve_map {
        validate_curve(c)?;
    }
    if let Some(m) = &doc.planar_map {
        validate_planar(m)?;
    }
    if let Some(f) = &doc.form {
        PolyForm::try_from(f.clone()).map_err(|e| SpecError::schema("/form", e.to_string()))?;
    }
    Ok(())
}

fn check_dims(r: usize, n: usize, base: &str) -> Result<(), SpecError> {
    if r == 0 || r > crate::MAX_RANK {
        return Err(SpecError::schema(format!("{base}/r"), format!("rank must lie in [1, {}]", crate::MAX_RANK)));
    }
    if n == 0 {
        return Err(SpecError::schema(format!("{base}/n"), "target dimension must be positive"));
    }
    Ok(())
}

fn validate_point(p: &PointMapDoc) -> Result<(), SpecError> {
    check_dims(p.r, p.n, "/point_map")?;
    if p.matrices.len() != p.n {
        return Err(SpecError::schema(
            "/point_map/matrices",
            format!("expected {} matrices, found {}", p.n, p.matrices.len()),
        ));
    }
    for (i, m) in p.matrices.iter().enumerate() {
        let path = format!("/point_map/matrices/{i}");
        if m.len() != p.r || m.iter().any(|row| row.len() != p.r) {
            return Err(SpecError::schema(path, format!("matrix is not square of size {}", p.r)));
        }
        if !finite(m.iter().flatten().flatten().copied()) {
            return Err(SpecError::schema(path, "non-finite entry"));
        }
    }
    Ok(())
}

fn validate_curve(c: &CurveMapDoc) -> Result<(), SpecError> {
    check_dims(c.r, c.n, "/curve_map")?;
    if let CurveBase::Interval { start, end } = c.base {
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(SpecError::schema("/curve_map/base", "interval needs finite start < end"));
        }
    }
    if c.entries.len() != c.n {
        return Err(SpecError::schema(
            "/curve_map/entries",
            format!("expected {} matrices, found {}", c.n, c.entries.len()),
        ));
    }
    let mut tables = false;
    for (i, m) in c.entries.iter().enumerate() {
        let path = format!("/curve_map/entries/{i}");
        if m.len() != c.r || m.iter().any(|row| row.len() != c.r) {
            return Err(SpecError::schema(path, format!("matrix is not square of size {}", c.r)));
        }
        for (j, e) in m.iter().flatten().enumerate() {
            let ok = match e {
                EntryDoc::Poly(v) => finite(v.iter().copied()),
                EntryDoc::Table(t) => {
                    tables = true;
                    finite(t.iter().flatten().copied())
                }
                EntryDoc::Trig { cos, sin } => finite(cos.iter().chain(sin).copied()),
            };
            if !ok {
                return Err(SpecError::schema(format!("{path}/{}/{}", j / c.r, j % c.r), "non-finite coefficient"));
            }
        }
    }
    match c.t_range {
        Some((lo, hi)) if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
            return Err(SpecError::schema("/curve_map/t_range", "range needs finite lo <= hi"));
        }
        None if tables => {
            return Err(SpecError::schema("/curve_map/t_range", "tables in (x, t) need a parameter range"));
        }
        _ => {}
    }
    if let Some(a) = &c.connection {
        if a.len() != c.r || a.iter().any(|row| row.len() != c.r) {
            return Err(SpecError::schema("/curve_map/connection", format!("matrix is not square of size {}", c.r)));
        }
        if !finite(a.iter().flatten().flatten().copied()) {
            return Err(SpecError::schema("/curve_map/connection", "non-finite coefficient"));
        }
    }
    Ok(())
}

fn validate_planar(m: &PlanarMap) -> Result<(), SpecError> {
    if m.r == 0 || m.r > crate::MAX_RANK {
        return Err(SpecError::schema("/planar_map/r", format!("rank must lie in [1, {}]", crate::MAX_RANK)));
    }
    if m.entries.len() != m.r * m.r {
        return Err(SpecError::schema("/planar_map/entries", format!("expected {} entries", m.r * m.r)));
    }
    let [a, b, c, d] = m.domain;
    if !(finite(m.domain) && a <= b && c <= d) {
        return Err(SpecError::schema("/planar_map/domain", "domain needs finite re_min <= re_max, im_min <= im_max"));
    }
    if !(m.tol.is_finite() && m.tol > 0.0) {
        return Err(SpecError::schema("/planar_map/tol", "tolerance must be positive"));
    }
    for (i, e) in m.entries.iter().enumerate() {
        if e.iter().any(|((p, q), c)| *p > 64 || *q > 64 || !finite(c.iter().copied())) {
            return Err(SpecError::schema(format!("/planar_map/entries/{i}"), "exponents must be <= 64 and coefficients finite"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Conversions

pub fn point_map(doc: &PointMapDoc, tol: f64) -> Result<AzumayaPointMap, azumaya_core::point::PointError> {
    let ms = doc
        .matrices
        .iter()
        .map(|m| ComplexMatrix::from_fn(doc.r, doc.r, |i, j| Complex64::new(m[i][j][0], m[i][j][1])))
        .collect();
    AzumayaPointMap::new(ms, doc.k, tol)
}

pub fn point_doc(map: &AzumayaPointMap) -> PointMapDoc {
    let r = map.rank();
    PointMapDoc {
        r,
        n: map.dim(),
        k: map.smoothness(),
        matrices: map
            .matrices()
            .iter()
            .map(|m| (0..r).map(|i| (0..r).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect())
            .collect(),
    }
}

impl CurveMapDoc {
    pub fn is_family(&self) -> bool {
        self.entries.iter().flatten().flatten().any(|e| matches!(e, EntryDoc::Table(_)))
    }

    pub fn family(&self, tol: f64) -> Option<FamilySpec> {
        let t_range = self.t_range?;
        let entries = self
            .entries
            .iter()
            .map(|m| {
                m.iter()
                    .flatten()
                    .map(|e| match e {
                        EntryDoc::Table(t) => t.clone(),
                        EntryDoc::Poly(p) => p.iter().map(|&c| vec![c]).collect(),
                        // trigonometric entries never reach here: families are polynomial
                        EntryDoc::Trig { .. } => Vec::new(),
                    })
                    .collect()
            })
            .collect();
        Some(FamilySpec { name: "spec".into(), t_range, base: self.base, r: self.r, k: self.k, tol, entries })
    }

    /// The map itself, or the family member at `t` (defaulting to the top of
    /// the parameter range).
    pub fn curve_map(&self, tol: f64, t: Option<f64>) -> Result<MatrixCurveMap, azumaya_core::worldvolume::WvError> {
        use azumaya_core::worldvolume::WvError;
        if self.is_family() || (t.is_some() && self.t_range.is_some()) {
            if self.entries.iter().flatten().flatten().any(|e| matches!(e, EntryDoc::Trig { .. })) {
                return Err(WvError::NotPolynomial);
            }
            let spec = self.family(tol).ok_or_else(|| WvError::InvalidMap("family needs t_range".into()))?;
            return evaluate_family(&spec, t.unwrap_or(spec.t_range.1));
        }
        let ms = self
            .entries
            .iter()
            .map(|m| MatrixFunction {
                r: self.r,
                entries: m
                    .iter()
                    .flatten()
                    .map(|e| match e {
                        EntryDoc::Poly(p) => Entry::Poly(p.clone()),
                        EntryDoc::Trig { cos, sin } => Entry::Trig { cos: cos.clone(), sin: sin.clone() },
                        EntryDoc::Table(_) => unreachable!("tables make the document a family"),
                    })
                    .collect(),
            })
            .collect();
        MatrixCurveMap::new(self.base, ms, self.k, tol)
    }

    pub fn connection_matrix(&self) -> Option<MatrixFunction> {
        self.connection.clone().map(MatrixFunction::from_polys)
    }
}

pub fn curve_doc(map: &MatrixCurveMap) -> CurveMapDoc {
    let r = map.r;
    CurveMapDoc {
        base: map.base,
        r,
        n: map.dim(),
        k: map.k,
        entries: map
            .ms
            .iter()
            .map(|m| {
                (0..r)
                    .map(|i| {
                        (0..r)
                            .map(|j| match m.entry(i, j) {
                                Entry::Poly(p) => EntryDoc::Poly(p.clone()),
                                Entry::Trig { cos, sin } => EntryDoc::Trig { cos: cos.clone(), sin: sin.clone() },
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect(),
        t_range: None,
        connection: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROTATION: &str = r#"{"version": "1", "point_map": {"r": 2, "n": 1, "k": "inf",
        "matrices": [[[[0, 0], [-1, 0]], [[1, 0], [0, 0]]]]}}"#;

    #[test]
    fn round_trip() {
        let doc = parse_spec(ROTATION.as_bytes()).unwrap();
        assert_eq!(doc.point_map.as_ref().unwrap().k, Smoothness::Infinite);
        let again = parse_spec(to_json(&doc).as_bytes()).unwrap();
        assert_eq!(doc, again);
    }

    #[test]
    fn non_square_matrix_path() {
        let bad = r#"{"version": "1", "point_map": {"r": 2, "n": 1,
            "matrices": [[[[0, 0], [1, 0]], [[1, 0]]]]}}"#;
        match parse_spec(bad.as_bytes()) {
            Err(SpecError::Schema { path, .. }) => assert_eq!(path, "/point_map/matrices/0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn type_errors_carry_pointer_paths() {
        let bad = r#"{"version": "1", "point_map": {"r": 2, "n": 1,
            "matrices": [[[[0, 0], [1, "x"]], [[1, 0], [0, 0]]]]}}"#;
        match parse_spec(bad.as_bytes()) {
            Err(SpecError::Schema { path, .. }) => assert_eq!(path, "/point_map/matrices/0/0/1/1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(parse_spec(b"{"), Err(SpecError::Parse(_))));
        assert!(matches!(parse_spec(&[0xff, 0xfe]), Err(SpecError::Parse(_))));
        let v2 = ROTATION.replace("\"1\"", "\"2\"");
        assert!(matches!(parse_spec(v2.as_bytes()), Err(SpecError::VersionUnsupported(_))));
        assert!(matches!(parse_spec(br#"{"version": "1"}"#), Err(SpecError::Schema { .. })));
        let k = ROTATION.replace("\"inf\"", "3");
        assert_eq!(parse_spec(k.as_bytes()).unwrap().point_map.unwrap().k, Smoothness::Finite(3));
    }

    #[test]
    fn pointer_conversion() {
        assert_eq!(pointer("point_map.matrices[0][1]"), "/point_map/matrices/0/1");
        assert_eq!(pointer("."), "");
        assert_eq!(pointer("options.tol"), "/options/tol");
    }

    #[test]
    fn curve_family_documents() {
        let fam = r#"{"version": "1", "curve_map": {"base": {"interval": {"start": -1, "end": 1}},
            "r": 1, "n": 1, "t_range": [0, 1], "entries": [[[ [[0, 0], [0, 1]] ]]]}}"#;
        let doc = parse_spec(fam.as_bytes()).unwrap();
        let c = doc.curve_map.as_ref().unwrap();
        assert!(c.is_family());
        let map = c.curve_map(1e-8, Some(0.5)).unwrap();
        assert!((map.ms[0].eval(2.0)[(0, 0)].re - 1.0).abs() < 1e-15);
        let round = curve_doc(&c.curve_map(1e-8, None).unwrap());
        assert_eq!(round.entries[0][0][0], EntryDoc::Poly(vec![0.0, 1.0]));
    }
}
