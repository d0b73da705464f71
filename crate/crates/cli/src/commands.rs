//! Command dispatch. Exit codes: 0 success, 1 domain failure, 2 usage or
//! I/O error (including malformed specs).

use std::ffi::OsString;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use azumaya_core::dga::check_laws;
use azumaya_core::fixtures::{curve_fixture_at, point_fixture};
use azumaya_core::forms::{
    check_calibration_vanishing, check_j_holomorphic, check_lagrangian, check_relative_dim0, check_slag,
    CalibrationInput, PlanarMap, PolyForm, SlagConvention,
};
use azumaya_core::jet::FnSpec;
use azumaya_core::linalg::DEFAULT_TOL;
use azumaya_core::point::{
    c0_residual, evaluate, minimal_annihilator, pushforward_module, support, validate, AzumayaPointMap, ModuleStructure,
    Smoothness,
};
use azumaya_core::worldvolume::{
    analyze_with, characteristic_polynomials, classify, pushforward_connection, AnalyzeOptions, BranchDiagram,
    MatrixCurveMap, MatrixFunction, WvError, DEFAULT_GRID,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::emit::{branch_csv, branch_svg};
use crate::spec::{self, curve_doc, parse_spec, MapSpecDoc, SpecError};
use crate::{MAX_GRID, TOL_ENV};

#[derive(Debug, Parser)]
#[command(name = "azumaya", version, about = "Matrix-valued maps: admissibility, supports, branch diagrams and adapted-form checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Input {
    /// JSON map specification.
    #[arg(long, conflicts_with = "fixture")]
    spec: Option<PathBuf>,
    /// Built-in named example.
    #[arg(long)]
    fixture: Option<String>,
    /// Numerical tolerance (overrides the spec and the environment).
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Clone, Args)]
struct CurveArgs {
    /// Grid points over the base.
    #[arg(long)]
    grid: Option<usize>,
    /// Worker threads for fiberwise work.
    #[arg(long)]
    threads: Option<usize>,
    /// Family parameter.
    #[arg(long)]
    t: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Debug, Clone, Args)]
struct Output {
    /// Write the artifact here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Convention {
    Im,
    Re,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Check {
    RelativeDim0,
    Lagrangian,
    Slag,
    Calibration,
    Holomorphic,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Commutation and real-spectrum check of a point map.
    Validate(Input),
    /// Support points with lengths and nilpotent filtrations.
    Support(Input),
    /// Image of a function under the point map.
    Eval {
        #[command(flatten)]
        input: Input,
        /// Function of y1..yn, e.g. "y1^2 + sin(y2)".
        #[arg(long = "f")]
        f: String,
    },
    /// Push-forward module and minimal annihilators.
    Pushforward(Input),
    /// Exact checks of the matrix differential calculus.
    DgaCheck {
        #[arg(long, default_value_t = 3)]
        r: usize,
        #[arg(long, default_value_t = 3)]
        degree: usize,
    },
    /// Branch diagram of a curve map (JSON, CSV or SVG).
    CurveAnalyze {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        curve: CurveArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Shape label of the branch diagram.
    CurveClassify {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        curve: CurveArgs,
    },
    /// Connection induced on the branches.
    Connection {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        curve: CurveArgs,
    },
    /// Relative dimension, Lagrangian, special Lagrangian, calibration or
    /// holomorphicity checks.
    AdaptedCheck {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        curve: CurveArgs,
        #[arg(long, value_enum, default_value_t = Check::Slag)]
        check: Check,
        #[arg(long, value_enum)]
        slag_convention: Option<Convention>,
        /// Coordinate plane for the calibration check, 1-based, e.g. "1,2,4".
        #[arg(long)]
        plane: Option<String>,
        /// Finite-difference step for the holomorphicity check.
        #[arg(long, default_value_t = 1e-4)]
        h: f64,
        /// Samples per side for the holomorphicity check.
        #[arg(long, default_value_t = 21)]
        samples: usize,
    },
    /// Family member at a parameter value, with its point fiber at `x`.
    FamilyEval {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        curve: CurveArgs,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        x: f64,
    },
    /// SVG of the branch diagram.
    Plot {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        curve: CurveArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Io(String),
    Spec(SpecError),
    Domain { kind: String, message: String },
}

type Result<T> = std::result::Result<T, Failure>;

/// Variant name of an error, looking through transparent wrappers.
fn kind_of(e: &impl std::fmt::Debug) -> String {
    let mut s = format!("{e:?}");
    for wrapper in ["Linalg(", "Jet(", "Worldvolume(", "Point("] {
        while let Some(rest) = s.strip_prefix(wrapper) {
            s = rest.to_string();
        }
    }
    s.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect()
}

fn domain(e: impl std::fmt::Debug + std::fmt::Display) -> Failure {
    Failure::Domain { kind: kind_of(&e), message: e.to_string() }
}

fn wv(e: WvError) -> Failure {
    match e {
        WvError::Unknown(name) => Failure::Usage(format!("unknown fixture `{name}`")),
        other => domain(other),
    }
}

struct Outcome {
    report: Value,
    pass: bool,
    /// Text written to `--out` or stdout instead of the JSON report.
    artifact: Option<(String, Option<PathBuf>)>,
}

impl Outcome {
    fn report(report: Value, pass: bool) -> Self {
        Outcome { report, pass, artifact: None }
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = catch_unwind(AssertUnwindSafe(|| dispatch(cli.command)));
    let result = match result {
        Ok(r) => r,
        Err(_) => Err(Failure::Domain { kind: "InternalError".into(), message: "internal error".into() }),
    };
    match result {
        Ok(outcome) => {
            if let Some((text, path)) = outcome.artifact {
                match path {
                    Some(p) => {
                        if let Err(e) = std::fs::write(&p, text) {
                            let _ = writeln!(stderr, "error: cannot write {}: {e}", p.display());
                            return 2;
                        }
                        let _ = writeln!(stdout, "{}", pretty(&outcome.report));
                    }
                    None => {
                        let _ = stdout.write_all(text.as_bytes());
                    }
                }
            } else {
                let _ = writeln!(stdout, "{}", pretty(&outcome.report));
            }
            if outcome.pass {
                0
            } else {
                1
            }
        }
        Err(Failure::Domain { kind, message }) => {
            let _ = writeln!(stdout, "{}", pretty(&json!({ "error": kind, "message": message })));
            let _ = writeln!(stderr, "error: {message}");
            1
        }
        Err(Failure::Spec(e)) => {
            let mut report = json!({ "error": e.kind(), "message": e.to_string() });
            if let SpecError::Schema { path, .. } = &e {
                report["path"] = json!(path);
            }
            let _ = writeln!(stdout, "{}", pretty(&report));
            let _ = writeln!(stderr, "error: {e}");
            2
        }
        Err(Failure::Usage(m)) | Err(Failure::Io(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            2
        }
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default()
}

fn load_doc(path: &PathBuf) -> Result<MapSpecDoc> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_spec(&bytes).map_err(Failure::Spec)
}

/// `--tol`, then the spec's options, then the environment, then the default.
fn resolve_tol(flag: Option<f64>, doc: Option<&MapSpecDoc>) -> Result<f64> {
    let env = match std::env::var(TOL_ENV) {
        Ok(v) => Some(v.trim().parse::<f64>().map_err(|_| Failure::Usage(format!("{TOL_ENV}={v:?} is not a number")))?),
        Err(_) => None,
    };
    let tol = flag.or(doc.and_then(|d| d.options.tol)).or(env).unwrap_or(DEFAULT_TOL);
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Failure::Usage(format!("tolerance {tol} must be positive")));
    }
    Ok(tol)
}

fn need_one(input: &Input) -> Result<()> {
    if input.spec.is_none() && input.fixture.is_none() {
        return Err(Failure::Usage("one of --spec or --fixture is required".into()));
    }
    Ok(())
}

fn point_input(input: &Input) -> Result<AzumayaPointMap> {
    need_one(input)?;
    if let Some(name) = &input.fixture {
        let tol = resolve_tol(input.tol, None)?;
        let map = point_fixture(name).map_err(wv)?;
        return AzumayaPointMap::new(map.matrices().to_vec(), map.smoothness(), tol).map_err(domain);
    }
    let doc = load_doc(input.spec.as_ref().expect("checked"))?;
    let tol = resolve_tol(input.tol, Some(&doc))?;
    let p = doc.point_map.as_ref().ok_or_else(|| Failure::Usage("spec has no point_map".into()))?;
    spec::point_map(p, tol).map_err(domain)
}

struct CurveInput {
    map: MatrixCurveMap,
    connection: Option<MatrixFunction>,
    grid: usize,
    slag: Option<SlagConvention>,
    form: Option<PolyForm>,
}

fn curve_input(input: &Input, curve: &CurveArgs) -> Result<CurveInput> {
    need_one(input)?;
    if let Some(t) = curve.t {
        if !t.is_finite() {
            return Err(Failure::Usage("--t must be finite".into()));
        }
    }
    let (map, connection, doc) = if let Some(name) = &input.fixture {
        let tol = resolve_tol(input.tol, None)?;
        let mut map = curve_fixture_at(name, curve.t).map_err(wv)?;
        map.tol = tol;
        (map, None, None)
    } else {
        let doc = load_doc(input.spec.as_ref().expect("checked"))?;
        let tol = resolve_tol(input.tol, Some(&doc))?;
        let c = doc.curve_map.as_ref().ok_or_else(|| Failure::Usage("spec has no curve_map".into()))?;
        let map = c.curve_map(tol, curve.t).map_err(wv)?;
        let connection = c.connection_matrix();
        (map, connection, Some(doc))
    };
    let grid = curve.grid.or(doc.as_ref().and_then(|d| d.options.grid_size)).unwrap_or(DEFAULT_GRID);
    if !(2..=MAX_GRID).contains(&grid) {
        return Err(Failure::Usage(format!("--grid must lie in [2, {MAX_GRID}]")));
    }
    let form = match doc.as_ref().and_then(|d| d.form.clone()) {
        Some(f) => Some(PolyForm::try_from(f).map_err(|e| Failure::Spec(SpecError::Schema { path: "/form".into(), message: e.to_string() }))?),
        None => None,
    };
    Ok(CurveInput { map, connection, grid, slag: doc.as_ref().and_then(|d| d.options.slag_convention), form })
}

fn diagram(ci: &CurveInput, curve: &CurveArgs) -> Result<BranchDiagram> {
    if curve.threads == Some(0) {
        return Err(Failure::Usage("--threads must be positive".into()));
    }
    analyze_with(&ci.map, AnalyzeOptions { grid_size: ci.grid, threads: curve.threads }).map_err(wv)
}

fn module_report(m: &ModuleStructure) -> Value {
    Value::Array(
        m.fibers
            .iter()
            .map(|f| {
                json!({
                    "point": f.point,
                    "dimension": f.dimension,
                    "filtration": f.filtration,
                    "jordan_type": f.jordan_type,
                    "summary": f.summary(),
                })
            })
            .collect(),
    )
}

fn matrix_json(m: &azumaya_core::linalg::ComplexMatrix) -> Value {
    Value::Array(
        (0..m.nrows()).map(|i| Value::Array((0..m.ncols()).map(|j| json!([m[(i, j)].re, m[(i, j)].im])).collect())).collect(),
    )
}

fn dispatch(command: Command) -> Result<Outcome> {
    match command {
        Command::Validate(input) => {
            let map = point_input(&input)?;
            let rep = validate(&map);
            let admissible = rep.admissible;
            Ok(Outcome::report(to_value(&rep), admissible))
        }
        Command::Support(input) => {
            let map = point_input(&input)?;
            let s = support(&map).map_err(domain)?;
            let mut report = to_value(&s);
            report["total_length"] = json!(s.total_length());
            report["reduced"] = json!(s.is_reduced());
            Ok(Outcome::report(report, true))
        }
        Command::Eval { input, f } => {
            let map = point_input(&input)?;
            let spec = FnSpec::parse(&f, map.dim()).map_err(|e| Failure::Usage(e.to_string()))?;
            let value = evaluate(&map, &spec).map_err(domain)?;
            let mut report = json!({ "f": f, "matrix": matrix_json(&value) });
            if map.smoothness() == Smoothness::Finite(0) {
                report["c0_residual"] = json!(c0_residual(&map, &spec, &value).map_err(domain)?);
            }
            Ok(Outcome::report(report, true))
        }
        Command::Pushforward(input) => {
            let map = point_input(&input)?;
            let module = pushforward_module(&map).map_err(domain)?;
            let mut annihilators = Vec::new();
            for axis in 0..map.dim() {
                let a = minimal_annihilator(&map, axis).map_err(domain)?;
                let exact = a.exact_coefficients(1000).map(|c| c.iter().map(|q| q.to_string()).collect::<Vec<_>>());
                annihilators.push(json!({
                    "axis": axis,
                    "polynomial": a.to_string(),
                    "factors": a.factors,
                    "coefficients": a.coefficients,
                    "exact_coefficients": exact,
                }));
            }
            let report = json!({
                "rank": map.rank(),
                "total_length": module.total_length(),
                "fibers": module_report(&module),
                "annihilators": annihilators,
            });
            Ok(Outcome::report(report, true))
        }
        Command::DgaCheck { r, degree } => {
            if !(1..=4).contains(&r) || degree > 4 {
                return Err(Failure::Usage("dga-check supports 1 <= r <= 4 and degree <= 4".into()));
            }
            let rep = check_laws(r, degree);
            let pass = rep.pass;
            Ok(Outcome::report(to_value(&rep), pass))
        }
        Command::CurveAnalyze { input, curve, output } => {
            let ci = curve_input(&input, &curve)?;
            let diag = diagram(&ci, &curve)?;
            match output.format {
                Format::Csv => {
                    let report = json!({ "written": output.out, "rows": diag.tracks.len() * diag.grid.len() });
                    Ok(Outcome { report, pass: true, artifact: Some((branch_csv(&diag), output.out)) })
                }
                Format::Svg => {
                    let report = json!({ "written": output.out });
                    Ok(Outcome { report, pass: true, artifact: Some((branch_svg(&diag), output.out)) })
                }
                Format::Json => {
                    let charpolys = if ci.map.is_polynomial() && ci.map.r <= 12 {
                        characteristic_polynomials(&ci.map).map_err(wv)?.iter().map(|p| json!(p.to_string())).collect()
                    } else {
                        Vec::new()
                    };
                    let report = json!({
                        "tracks": diag.tracks.len(),
                        "events": diag.events,
                        "ambiguities": diag.ambiguities,
                        "monodromy": diag.monodromy,
                        "characteristic_polynomials": charpolys,
                        "diagram": diag,
                    });
                    match output.out {
                        Some(path) => Ok(Outcome {
                            report: json!({ "written": path, "tracks": diag.tracks.len() }),
                            pass: true,
                            artifact: Some((pretty(&report), Some(path))),
                        }),
                        None => Ok(Outcome::report(report, true)),
                    }
                }
            }
        }
        Command::CurveClassify { input, curve } => {
            let ci = curve_input(&input, &curve)?;
            let diag = diagram(&ci, &curve)?;
            Ok(Outcome::report(to_value(&classify(&diag)), true))
        }
        Command::Connection { input, curve } => {
            let ci = curve_input(&input, &curve)?;
            let diag = diagram(&ci, &curve)?;
            let conn = pushforward_connection(&ci.map, ci.connection.as_ref(), &diag).map_err(wv)?;
            Ok(Outcome::report(to_value(&conn), true))
        }
        Command::AdaptedCheck { input, curve, check, slag_convention, plane, h, samples } => {
            adapted(&input, &curve, check, slag_convention, plane, h, samples)
        }
        Command::FamilyEval { input, curve, x } => {
            let ci = curve_input(&input, &curve)?;
            let (lo, hi) = ci.map.base.bounds();
            if !(x >= lo && x <= hi) {
                return Err(Failure::Usage(format!("--x must lie in [{lo}, {hi}]")));
            }
            let fiber = AzumayaPointMap::new(ci.map.fiber(x), ci.map.k, ci.map.tol).map_err(domain)?;
            let module = pushforward_module(&fiber).map_err(domain)?;
            let diag = diagram(&ci, &curve)?;
            let class = classify(&diag);
            let connection = pushforward_connection(&ci.map, ci.connection.as_ref(), &diag);
            let invariance = match &connection {
                Ok(c) => json!(c.filtered.iter().flat_map(|f| f.invariance_residual.iter().copied()).fold(0.0, f64::max)),
                Err(e) => json!(e.to_string()),
            };
            let report = json!({
                "t": curve.t,
                "curve_map": curve_doc(&ci.map),
                "label": class.label,
                "fiber": { "x": x, "modules": module_report(&module) },
                "connection_invariance_residual": invariance,
            });
            Ok(Outcome::report(report, true))
        }
        Command::Plot { input, curve, out } => {
            let ci = curve_input(&input, &curve)?;
            let diag = diagram(&ci, &curve)?;
            let report = json!({ "written": out });
            Ok(Outcome { report, pass: true, artifact: Some((branch_svg(&diag), Some(out))) })
        }
    }
}

fn parse_plane(text: &str, n: usize) -> Result<Vec<usize>> {
    let dirs: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse::<usize>().ok().filter(|&d| d >= 1 && d <= n).map(|d| d - 1))
        .collect::<Option<_>>()
        .ok_or_else(|| Failure::Usage(format!("--plane needs comma-separated directions in 1..={n}")))?;
    Ok(dirs)
}

fn adapted(
    input: &Input,
    curve: &CurveArgs,
    check: Check,
    convention: Option<Convention>,
    plane: Option<String>,
    h: f64,
    samples: usize,
) -> Result<Outcome> {
    let forms_err = |e: azumaya_core::forms::FormsError| match e {
        azumaya_core::forms::FormsError::Worldvolume(w) => wv(w),
        other => domain(other),
    };
    if check == Check::Calibration && input.spec.is_none() && input.fixture.is_none() {
        // constant coordinate plane against the standard G2 form
        let text = plane.ok_or_else(|| Failure::Usage("calibration needs --spec, --fixture or --plane".into()))?;
        let eta = PolyForm::standard_g2();
        let dirs = parse_plane(&text, eta.n())?;
        let rep = check_calibration_vanishing(&CalibrationInput::coordinate_plane(eta.n(), &dirs), &eta, dirs.len())
            .map_err(forms_err)?;
        let pass = rep.pass;
        return Ok(Outcome::report(to_value(&rep), pass));
    }
    if check == Check::Holomorphic {
        need_one(input)?;
        if !(h.is_finite() && h > 0.0) || samples == 0 || samples > 1000 {
            return Err(Failure::Usage("--h must be positive and --samples in 1..=1000".into()));
        }
        let map: PlanarMap = match &input.fixture {
            Some(name) => planar_fixture(name)?,
            None => {
                let doc = load_doc(input.spec.as_ref().expect("checked"))?;
                let mut m = doc.planar_map.clone().ok_or_else(|| Failure::Usage("spec has no planar_map".into()))?;
                if input.tol.is_some() || doc.options.tol.is_some() {
                    m.tol = resolve_tol(input.tol, Some(&doc))?;
                }
                m
            }
        };
        let rep = check_j_holomorphic(&map, samples, h).map_err(forms_err)?;
        let pass = rep.pass;
        return Ok(Outcome::report(to_value(&rep), pass));
    }
    let ci = curve_input(input, curve)?;
    let diag = diagram(&ci, curve)?;
    let area = || PolyForm::area_form();
    let (value, pass) = match check {
        Check::RelativeDim0 => {
            let rep = check_relative_dim0(&diag);
            let pass = rep.pass;
            (to_value(&rep), pass)
        }
        Check::Lagrangian => {
            let omega = ci.form.clone().unwrap_or_else(area);
            let rep = check_lagrangian(&diag, &omega, 1, diag.n).map_err(forms_err)?;
            let pass = rep.pass;
            (to_value(&rep), pass)
        }
        Check::Slag => {
            let conv = match convention {
                Some(Convention::Im) => SlagConvention::Im,
                Some(Convention::Re) => SlagConvention::Re,
                None => ci.slag.unwrap_or_default(),
            };
            let rep = check_slag(&diag, conv).map_err(forms_err)?;
            let pass = rep.pass;
            let mut v = to_value(&rep);
            v["convention"] = to_value(&conv);
            (v, pass)
        }
        Check::Calibration => {
            let alpha = match ci.form.clone() {
                Some(f) => f,
                None if diag.n == 7 => PolyForm::standard_g2(),
                None => return Err(Failure::Usage("calibration on a curve needs a `form` in the spec".into())),
            };
            let rep = check_calibration_vanishing(&CalibrationInput::Diagram(&diag), &alpha, 1).map_err(forms_err)?;
            let pass = rep.pass;
            (to_value(&rep), pass)
        }
        Check::Holomorphic => unreachable!("handled above"),
    };
    Ok(Outcome::report(value, pass))
}

/// Scalar planar examples: the holomorphic `z²` and the antiholomorphic `z̄`.
fn planar_fixture(name: &str) -> Result<PlanarMap> {
    let dom = [-1.0, 1.0, -1.0, 1.0];
    match name {
        "z-squared" => Ok(PlanarMap::scalar(&[((2, 0), [1.0, 0.0])], dom)),
        "conj-z" => Ok(PlanarMap::scalar(&[((0, 1), [1.0, 0.0])], dom)),
        other => Err(Failure::Usage(format!("unknown planar fixture `{other}` (try z-squared, conj-z)"))),
    }
}
