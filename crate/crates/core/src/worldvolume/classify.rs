//! Coarse shape of a branch diagram: simple strings, strings carrying
//! nilpotent clouds, and their crossings or overlaps.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::analyze::{BranchDiagram, EventKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DiagramKind {
    AllSimple,
    MixedSimpleNilpotent { order: usize },
    SingleNilpotent { order: usize },
    General,
}

impl fmt::Display for DiagramKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiagramKind::AllSimple => write!(f, "all-simple"),
            DiagramKind::MixedSimpleNilpotent { order } => write!(f, "mixed-simple-nilpotent(order {order})"),
            DiagramKind::SingleNilpotent { order } => write!(f, "single-nilpotent-order-{order}"),
            DiagramKind::General => write!(f, "general"),
        }
    }
}

/// A track's typical data: length and cloud order (joint nilpotency index
/// minus one, so a reduced string has order 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrackProfile {
    pub track: usize,
    pub length: usize,
    pub cloud_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalLabel {
    pub start: f64,
    pub end: f64,
    pub distinct_tracks: usize,
    pub profile: Vec<TrackProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Overlap {
    pub start: f64,
    pub end: f64,
    pub tracks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub label: String,
    pub kind: DiagramKind,
    pub tracks: Vec<TrackProfile>,
    pub intervals: Vec<IntervalLabel>,
    pub crossings: Vec<f64>,
    pub overlaps: Vec<Overlap>,
}

fn mode(values: impl Iterator<Item = usize>) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(v, _)| v)
}

pub fn classify(diag: &BranchDiagram) -> Classification {
    let t = diag.tracks.len();
    let n = diag.grid.len();
    // Typical cloud order: samples where the track sits alone in its block,
    // falling back to all samples for tracks that are never alone.
    let tracks: Vec<TrackProfile> = diag
        .tracks
        .iter()
        .map(|tr| {
            let alone = (0..n).filter(|&i| (0..t).all(|o| o == tr.id || !diag.co_located(tr.id, o, i)));
            let order = mode(alone.map(|i| tr.samples[i].nilpotency_order() - 1))
                .or_else(|| mode(tr.samples.iter().map(|s| s.nilpotency_order() - 1)))
                .unwrap_or(0);
            TrackProfile { track: tr.id, length: tr.length, cloud_order: order }
        })
        .collect();

    let nilpotent: Vec<&TrackProfile> = tracks.iter().filter(|p| p.cloud_order > 0).collect();
    let kind = if nilpotent.is_empty() {
        DiagramKind::AllSimple
    } else if tracks.len() == 1 {
        DiagramKind::SingleNilpotent { order: nilpotent[0].cloud_order }
    } else if nilpotent.len() < tracks.len() {
        let order = nilpotent.iter().map(|p| p.cloud_order).max().unwrap_or(0);
        DiagramKind::MixedSimpleNilpotent { order }
    } else {
        DiagramKind::General
    };

    let intervals = diag
        .components
        .iter()
        .map(|c| {
            let mut seen: Vec<usize> = Vec::new();
            let mut distinct = 0;
            for ct in &c.tracks {
                if !ct.co_located.iter().any(|o| seen.contains(o)) {
                    distinct += 1;
                }
                seen.push(ct.track);
            }
            IntervalLabel {
                start: c.start,
                end: c.end,
                distinct_tracks: distinct,
                profile: c
                    .tracks
                    .iter()
                    .map(|ct| TrackProfile {
                        track: ct.track,
                        length: ct.length,
                        cloud_order: ct.filtration.len().saturating_sub(1),
                    })
                    .collect(),
            }
        })
        .collect();

    let crossings =
        diag.events.iter().filter(|e| e.kind == EventKind::Crossing).map(|e| e.x).collect();

    let (lo, hi) = diag.base.bounds();
    let mut overlaps = Vec::new();
    for e in diag.events.iter().filter(|e| e.kind == EventKind::Merge) {
        let end = diag
            .events
            .iter()
            .find(|s| s.kind == EventKind::Split && s.tracks == e.tracks && s.x >= e.x)
            .map_or(hi, |s| s.x);
        overlaps.push(Overlap { start: e.x, end, tracks: e.tracks.clone() });
    }
    for s in diag.events.iter().filter(|e| e.kind == EventKind::Split) {
        let opened = diag.events.iter().any(|m| m.kind == EventKind::Merge && m.tracks == s.tracks && m.x <= s.x);
        if !opened {
            overlaps.push(Overlap { start: lo, end: s.x, tracks: s.tracks.clone() });
        }
    }
    overlaps.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.tracks.cmp(&b.tracks)));

    Classification { label: kind.to_string(), kind, tracks, intervals, crossings, overlaps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::worldvolume::{analyze, DEFAULT_GRID};

    fn label(name: &str) -> Classification {
        let map = fixtures::curve_fixture(name).unwrap();
        classify(&analyze(&map, DEFAULT_GRID).unwrap())
    }

    #[test]
    fn three_simple_strings() {
        let c = label("example-5.2.6.a");
        assert_eq!(c.label, "all-simple");
        assert_eq!(c.crossings.len(), 2);
        assert!(c.overlaps.is_empty());
    }

    #[test]
    fn simple_plus_cloud() {
        let c = label("example-5.2.6.b");
        assert_eq!(c.label, "mixed-simple-nilpotent(order 1)");
        assert_eq!(c.tracks.len(), 2);
    }

    #[test]
    fn single_cloud_of_order_two() {
        let c = label("example-5.2.6.c");
        assert_eq!(c.label, "single-nilpotent-order-2");
        assert!(c.intervals.iter().all(|i| i.distinct_tracks == 1));
    }

    #[test]
    fn interval_labels_cover_base() {
        let c = label("example-7.2.2-phi1");
        assert_eq!(c.intervals.len(), 4);
        assert_eq!(c.intervals[0].start, -2.0);
        assert_eq!(c.intervals[3].end, 2.0);
        assert!(c.intervals.iter().all(|i| i.distinct_tracks == 3));
    }
}
