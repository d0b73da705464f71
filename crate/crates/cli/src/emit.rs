//! Deterministic CSV tables and SVG plots of branch diagrams.

use std::fmt::Write as _;

use azumaya_core::worldvolume::{BranchDiagram, EventKind};

/// 17 significant digits, with `-0` folded into `0`.
fn num(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.16e}")
}

pub fn csv_header(n: usize) -> String {
    let mut cols = vec!["x".to_string(), "branch_id".to_string()];
    cols.extend((1..=n).map(|i| format!("y{i}")));
    cols.extend(["length", "nilpotency_order", "filtration"].map(String::from));
    cols.join(",")
}

/// One row per grid point and track, sorted by `(x, branch_id)`.
pub fn branch_csv(diag: &BranchDiagram) -> String {
    let mut out = csv_header(diag.n);
    out.push('\n');
    let mut order: Vec<usize> = (0..diag.grid.len()).collect();
    order.sort_by(|&a, &b| diag.grid[a].total_cmp(&diag.grid[b]));
    for i in order {
        for tr in &diag.tracks {
            let s = &tr.samples[i];
            let _ = write!(out, "{},{}", num(diag.grid[i]), tr.id);
            for v in &s.lambda {
                let _ = write!(out, ",{}", num(*v));
            }
            let filtration: Vec<String> = s.filtration.iter().map(usize::to_string).collect();
            let _ = writeln!(out, ",{},{},{}", s.block_length, s.nilpotency_order(), filtration.join(";"));
        }
    }
    out
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];
const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 40.0;

fn event_colour(kind: EventKind) -> &'static str {
    match kind {
        EventKind::Crossing => "#000000",
        EventKind::Merge => "#ff7f0e",
        EventKind::Split => "#2ca02c",
        EventKind::ProfileChange => "#9467bd",
    }
}

/// `(x, y^k)` panels for the first two target coordinates. Nilpotency order
/// above one draws a translucent halo whose width grows with the order;
/// events are circles on the tracks involved.
pub fn branch_svg(diag: &BranchDiagram) -> String {
    let panels = diag.n.min(2);
    let height = panels as f64 * (PANEL_H + MARGIN) + MARGIN;
    let width = PANEL_W + 2.0 * MARGIN;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, x1) = diag.base.bounds();
    for axis in 0..panels {
        let top = MARGIN + axis as f64 * (PANEL_H + MARGIN);
        let values = diag.tracks.iter().flat_map(|t| t.samples.iter().map(move |s| s.lambda[axis]));
        let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (-1.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * PANEL_W;
        let py = |y: f64| top + (hi - y) / (hi - lo) * PANEL_H;
        let _ = writeln!(
            out,
            r##"<g id="panel-y{}"><rect x="{MARGIN}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#999"/>"##,
            axis + 1
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" font-size="12" font-family="sans-serif">y{} over x in [{}, {}]</text>"#,
            MARGIN,
            top - 6.0,
            axis + 1,
            x0,
            x1
        );
        for tr in &diag.tracks {
            let colour = PALETTE[tr.id % PALETTE.len()];
            // halos on runs of constant nilpotency order above one
            let mut run: Vec<usize> = Vec::new();
            let flush = |run: &mut Vec<usize>, out: &mut String| {
                if let Some(&first) = run.first() {
                    let order = tr.samples[first].nilpotency_order();
                    if order > 1 && run.len() > 1 {
                        let pts: Vec<String> =
                            run.iter().map(|&i| format!("{:.2},{:.2}", px(diag.grid[i]), py(tr.samples[i].lambda[axis]))).collect();
                        let _ = writeln!(
                            out,
                            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-opacity="0.25" stroke-width="{}" stroke-linecap="round"/>"#,
                            pts.join(" "),
                            4 * order
                        );
                    }
                }
                run.clear();
            };
            for i in 0..diag.grid.len() {
                if let Some(&last) = run.last() {
                    if tr.samples[last].nilpotency_order() != tr.samples[i].nilpotency_order() {
                        flush(&mut run, &mut out);
                    }
                }
                run.push(i);
            }
            flush(&mut run, &mut out);
            let pts: Vec<String> =
                (0..diag.grid.len()).map(|i| format!("{:.2},{:.2}", px(diag.grid[i]), py(tr.samples[i].lambda[axis]))).collect();
            let _ = writeln!(
                out,
                r#"<polyline id="track-{}-y{}" points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
                tr.id,
                axis + 1,
                pts.join(" ")
            );
        }
        for e in &diag.events {
            for &t in &e.tracks {
                let y = diag.interpolate(t, e.x)[axis];
                let _ = writeln!(
                    out,
                    r#"<circle class="event {:?}" cx="{:.2}" cy="{:.2}" r="4" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                    e.kind,
                    px(e.x),
                    py(y),
                    event_colour(e.kind)
                );
            }
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}
