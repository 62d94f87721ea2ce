//! Spatial join of road edges onto the directed grid: per edge, the list
//! of intersecting (row, col, heading) cells with overlap fractions,
//! honoring positional and angular margins.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::atomic_write;
use crate::error::{Error, Result};
use crate::grid::{heading_quadrant, normalize_angle, GridConfig, Heading};
use crate::roadgraph::{Edge, RoadGraph};

/// Interpolation and margin parameters of the join.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JoinParams {
    /// Interpolation step along edge geometries, degrees.
    pub step: f64,
    /// Positional margin around cells, degrees (Chebyshev).
    pub pos_margin: f64,
    /// Angular margin around quadrant boundaries, degrees.
    pub ang_margin: f64,
}

impl Default for JoinParams {
    fn default() -> Self {
        JoinParams {
            step: 0.0001,
            pos_margin: 0.0005,
            ang_margin: 10.0,
        }
    }
}

impl JoinParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::InvalidJoinParams(format!(
                "step must be > 0, got {}",
                self.step
            )));
        }
        if !(self.pos_margin >= 0.0) {
            return Err(Error::InvalidJoinParams(format!(
                "pos_margin must be >= 0, got {}",
                self.pos_margin
            )));
        }
        if !(0.0..45.0).contains(&self.ang_margin) {
            return Err(Error::InvalidJoinParams(format!(
                "ang_margin must be in [0, 45), got {}",
                self.ang_margin
            )));
        }
        Ok(())
    }
}

/// One directed cell attributed to an edge, with the share of the edge's
/// sample points falling into it (0 for margin-only cells).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellFraction {
    pub row: usize,
    pub col: usize,
    pub heading: Heading,
    pub fraction: f64,
}

/// Interpolated point on an edge, carrying the bearing of its leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub lat: f64,
    pub lon: f64,
    pub bearing: f64,
}

/// Grid bearing of the direction a -> b, degrees clockwise from north in
/// plain degree space.
pub fn bearing_deg(a: (f64, f64), b: (f64, f64)) -> f64 {
    normalize_angle((b.1 - a.1).atan2(b.0 - a.0).to_degrees())
}

// Guards against float noise pushing an exact-multiple ratio to the next
// integer, so a 3-step-long leg yields exactly 4 points.
fn intervals_for(len: f64, step: f64) -> usize {
    (((len / step) - 1e-9).ceil() as usize).max(1)
}

/// Sample a polyline at spacing <= `step` (degree-space Euclidean), both
/// endpoints included. Each point carries the bearing of its containing
/// leg; bearings change exactly at vertices.
pub fn interpolate(geometry: &[(f64, f64)], step: f64) -> Vec<SamplePoint> {
    let mut out = Vec::new();
    let mut last_bearing = 0.0;
    for w in geometry.windows(2) {
        let (p, q) = (w[0], w[1]);
        let len = ((q.0 - p.0).powi(2) + (q.1 - p.1).powi(2)).sqrt();
        if len == 0.0 {
            continue;
        }
        let bearing = bearing_deg(p, q);
        last_bearing = bearing;
        let n = intervals_for(len, step);
        for i in 0..n {
            let f = i as f64 / n as f64;
            out.push(SamplePoint {
                lat: p.0 + (q.0 - p.0) * f,
                lon: p.1 + (q.1 - p.1) * f,
                bearing,
            });
        }
    }
    if let Some(&last) = geometry.last() {
        out.push(SamplePoint {
            lat: last.0,
            lon: last.1,
            bearing: last_bearing,
        });
    }
    out
}

/// Headings attributed to a bearing: its own quadrant, plus the adjacent
/// quadrant when the bearing lies within `ang_margin` of a quadrant
/// boundary (0/90/180/270). Result is sorted in channel order.
pub fn headings_for(bearing: f64, ang_margin: f64) -> Vec<Heading> {
    let bearing = normalize_angle(bearing);
    let mut set = BTreeSet::new();
    set.insert(heading_quadrant(bearing));
    for boundary in [0.0, 90.0, 180.0, 270.0] {
        let diff = (bearing - boundary).rem_euclid(360.0);
        let dist = diff.min(360.0 - diff);
        if dist <= ang_margin {
            set.insert(heading_quadrant(normalize_angle(boundary - 45.0)));
            set.insert(heading_quadrant(normalize_angle(boundary + 45.0)));
        }
    }
    set.into_iter().collect()
}

// Liang-Barsky style test: does the segment p-q intersect the cell
// rectangle inflated by `margin` on each side? Equivalent to some point
// of the segment lying within Chebyshev distance `margin` of the cell.
fn segment_touches_inflated_rect(
    p: (f64, f64),
    q: (f64, f64),
    rect: (f64, f64, f64, f64),
    margin: f64,
) -> bool {
    let (lat_lo, lat_hi, lon_lo, lon_hi) = rect;
    let (lo0, hi0) = (lat_lo - margin, lat_hi + margin);
    let (lo1, hi1) = (lon_lo - margin, lon_hi + margin);
    let mut t_min: f64 = 0.0;
    let mut t_max: f64 = 1.0;
    for (start, delta, lo, hi) in [
        (p.0, q.0 - p.0, lo0, hi0),
        (p.1, q.1 - p.1, lo1, hi1),
    ] {
        if delta == 0.0 {
            if start < lo || start > hi {
                return false;
            }
            continue;
        }
        let (mut t0, mut t1) = ((lo - start) / delta, (hi - start) / delta);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_min = t_min.max(t0);
        t_max = t_max.min(t1);
        if t_min > t_max {
            return false;
        }
    }
    true
}

// Candidate cell index range covering the inflated bounding box of a leg,
// clipped to the grid.
fn candidate_range(cfg: &GridConfig, lo: f64, hi: f64, margin: f64, axis_max: f64, n: usize, north_down: bool) -> (usize, usize) {
    // For rows the axis runs from lat_max downward; for cols from lon_min upward.
    let (a, b) = if north_down {
        ((axis_max - (hi + margin)) / cfg.cell_size, (axis_max - (lo - margin)) / cfg.cell_size)
    } else {
        ((lo - margin - axis_max) / cfg.cell_size, (hi + margin - axis_max) / cfg.cell_size)
    };
    let first = a.floor().max(0.0) as usize;
    let last = (b.floor() as i64).clamp(0, n as i64 - 1) as usize;
    (first.min(n.saturating_sub(1)), last)
}

/// All (row, col, heading) cells attributed to an edge.
///
/// A cell intersects when any point of the edge polyline lies within the
/// positional margin (Chebyshev distance to the cell rectangle); its
/// headings come from the bearings of the touching legs through
/// [`headings_for`]. The fraction of a directed cell is the share of the
/// edge's interpolation sample points whose containing cell it is;
/// margin-only cells carry fraction 0.
pub fn intersecting_cells(edge: &Edge, cfg: &GridConfig, jp: &JoinParams) -> Vec<CellFraction> {
    let mut members: BTreeSet<(usize, usize, Heading)> = BTreeSet::new();

    // Continuous capture per leg keeps the cell set independent of the
    // sampling density.
    for w in edge.geometry.windows(2) {
        let (p, q) = (w[0], w[1]);
        if p == q {
            continue;
        }
        let headings = headings_for(bearing_deg(p, q), jp.ang_margin);
        let (lat_lo, lat_hi) = (p.0.min(q.0), p.0.max(q.0));
        let (lon_lo, lon_hi) = (p.1.min(q.1), p.1.max(q.1));
        let (row_first, row_last) =
            candidate_range(cfg, lat_lo, lat_hi, jp.pos_margin, cfg.lat_max, cfg.rows, true);
        let (col_first, col_last) =
            candidate_range(cfg, lon_lo, lon_hi, jp.pos_margin, cfg.lon_min, cfg.cols, false);
        for row in row_first..=row_last {
            for col in col_first..=col_last {
                if headings.iter().all(|h| members.contains(&(row, col, *h))) {
                    continue;
                }
                if segment_touches_inflated_rect(p, q, cfg.cell_rect(row, col), jp.pos_margin) {
                    for &h in &headings {
                        members.insert((row, col, h));
                    }
                }
            }
        }
    }

    // Sample-point shares define the fractions.
    let samples = interpolate(&edge.geometry, jp.step);
    let total = samples.len();
    let mut counts: BTreeMap<(usize, usize, Heading), usize> = BTreeMap::new();
    for s in &samples {
        if let Some((row, col)) = cfg.cell_of(s.lat, s.lon) {
            for h in headings_for(s.bearing, jp.ang_margin) {
                *counts.entry((row, col, h)).or_insert(0) += 1;
                members.insert((row, col, h));
            }
        }
    }

    members
        .into_iter()
        .map(|(row, col, heading)| CellFraction {
            row,
            col,
            heading,
            fraction: counts.get(&(row, col, heading)).copied().unwrap_or(0) as f64
                / total as f64,
        })
        .collect()
}

/// Per-edge intersections for a whole graph, keyed by (u, v, gkey).
pub type IntersectionMap = BTreeMap<(u64, u64, u64), Vec<CellFraction>>;

pub fn join_graph(graph: &RoadGraph, cfg: &GridConfig, jp: &JoinParams) -> IntersectionMap {
    graph
        .edges
        .par_iter()
        .map(|edge| (edge.key(), intersecting_cells(edge, cfg, jp)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Write intersections as CSV with columns u,v,gkey,row,col,heading,fraction.
pub fn write_intersections_csv(map: &IntersectionMap, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["u", "v", "gkey", "row", "col", "heading", "fraction"])?;
    for ((u, v, gkey), cells) in map {
        for c in cells {
            writer.write_record([
                u.to_string(),
                v.to_string(),
                gkey.to_string(),
                c.row.to_string(),
                c.col.to_string(),
                c.heading.to_string(),
                c.fraction.to_string(),
            ])?;
        }
    }
    let bytes = writer.into_inner().expect("in-memory flush");
    atomic_write(path, &bytes)
}

pub fn read_intersections_csv(path: &Path) -> Result<IntersectionMap> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Csv(e),
    })?;
    let mut map = IntersectionMap::new();
    for record in reader.records() {
        let record = record?;
        let parse = |i: usize| -> Result<u64> {
            record
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::MalformedRecord {
                    path: path.to_path_buf(),
                    reason: format!("bad field {i} in {record:?}"),
                })
        };
        let heading: Heading = record
            .get(5)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedRecord {
                path: path.to_path_buf(),
                reason: format!("bad heading in {record:?}"),
            })?;
        let fraction: f64 = record
            .get(6)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedRecord {
                path: path.to_path_buf(),
                reason: format!("bad fraction in {record:?}"),
            })?;
        map.entry((parse(0)?, parse(1)?, parse(2)?))
            .or_default()
            .push(CellFraction {
                row: parse(3)? as usize,
                col: parse(4)? as usize,
                heading,
                fraction,
            });
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadgraph::gkey;

    fn grid_10x10() -> GridConfig {
        GridConfig::new(48.0, 48.01, 11.0, 11.01, 0.001, 288).unwrap()
    }

    fn edge_from(geometry: Vec<(f64, f64)>) -> Edge {
        Edge {
            u: 1,
            v: 2,
            gkey: gkey(&geometry),
            highway: "primary".into(),
            speed_kph: 50.0,
            length_m: crate::roadgraph::polyline_length_m(&geometry).max(1.0),
            geometry,
        }
    }

    #[test]
    fn interpolate_point_counts() {
        let pts = interpolate(&[(0.0, 0.0), (0.0, 0.0003)], 0.0001);
        assert_eq!(pts.len(), 4);

        let short = interpolate(&[(0.0, 0.0), (0.0, 0.00002)], 0.0001);
        assert_eq!(short.len(), 2);
    }

    #[test]
    fn interpolate_bearing_changes_at_vertex() {
        let pts = interpolate(&[(0.0, 0.0), (0.001, 0.0), (0.001, 0.001)], 0.0005);
        // First leg goes due north (0 deg), second due east (90 deg).
        assert!(pts.iter().any(|p| p.bearing == 0.0));
        assert!(pts.iter().any(|p| p.bearing == 90.0));
        let first_east = pts.iter().position(|p| p.bearing == 90.0).unwrap();
        assert!(pts[..first_east].iter().all(|p| p.bearing == 0.0));
        // The leg switch happens exactly at the vertex.
        assert_eq!(pts[first_east].lat, 0.001);
        assert_eq!(pts[first_east].lon, 0.0);
    }

    #[test]
    fn headings_for_examples() {
        assert_eq!(headings_for(90.0, 10.0), vec![Heading::NE, Heading::SE]);
        assert_eq!(headings_for(45.0, 10.0), vec![Heading::NE]);
        assert_eq!(headings_for(85.0, 10.0), vec![Heading::NE, Heading::SE]);
        // Wrap-around boundary at 0/360.
        assert_eq!(headings_for(355.0, 10.0), vec![Heading::NE, Heading::NW]);
        assert_eq!(headings_for(5.0, 10.0), vec![Heading::NE, Heading::NW]);
    }

    #[test]
    fn eastbound_edge_in_one_row() {
        let cfg = grid_10x10();
        // ~300 m eastbound through the middle of row 4, columns 2..4.
        let edge = edge_from(vec![(48.0055, 11.0025), (48.0055, 11.0055)]);
        let cells = intersecting_cells(&edge, &cfg, &JoinParams::default());
        for h in [Heading::NE, Heading::SE] {
            // 3-4 sample-bearing cells per heading, all in the edge's row;
            // the half-cell margin may add neighbor-row cells at fraction 0.
            let carrying: Vec<&CellFraction> = cells
                .iter()
                .filter(|c| c.heading == h && c.fraction > 0.0)
                .collect();
            assert!((3..=4).contains(&carrying.len()), "heading {h}: {carrying:?}");
            assert!(carrying.iter().all(|c| c.row == 4));
        }
        assert!(cells
            .iter()
            .all(|c| c.heading == Heading::NE || c.heading == Heading::SE));
    }

    #[test]
    fn edge_outside_box_is_empty() {
        let cfg = grid_10x10();
        let edge = edge_from(vec![(50.0, 11.0), (50.001, 11.0)]);
        assert!(intersecting_cells(&edge, &cfg, &JoinParams::default()).is_empty());
    }

    #[test]
    fn fractions_per_heading_sum_to_at_most_one() {
        let cfg = grid_10x10();
        let edge = edge_from(vec![(48.0031, 11.0012), (48.0074, 11.0068)]);
        let cells = intersecting_cells(&edge, &cfg, &JoinParams::default());
        for h in Heading::ALL {
            let sum: f64 = cells
                .iter()
                .filter(|c| c.heading == h)
                .map(|c| c.fraction)
                .sum();
            assert!(sum <= 1.0 + 1e-12, "heading {h}: sum {sum}");
        }
        // Fully in-box edge: total over all headings reaches at least 1.
        let total: f64 = cells.iter().map(|c| c.fraction).sum();
        assert!(total >= 1.0 - 1e-12);
    }

    #[test]
    fn boundary_crossing_edge_fraction_below_one() {
        let cfg = grid_10x10();
        // Half of this edge lies south of the box.
        let edge = edge_from(vec![(47.996, 11.0045), (48.004, 11.0045)]);
        let cells = intersecting_cells(&edge, &cfg, &JoinParams::default());
        assert!(!cells.is_empty());
        let per_heading: f64 = cells
            .iter()
            .filter(|c| c.heading == Heading::NE)
            .map(|c| c.fraction)
            .sum();
        assert!(per_heading < 1.0);
    }

    #[test]
    fn no_duplicate_directed_cells() {
        let cfg = grid_10x10();
        let edge = edge_from(vec![(48.0012, 11.0012), (48.0088, 11.0034), (48.0088, 11.0088)]);
        let cells = intersecting_cells(&edge, &cfg, &JoinParams::default());
        let mut seen = BTreeSet::new();
        for c in &cells {
            assert!(seen.insert((c.row, c.col, c.heading)), "duplicate {c:?}");
        }
    }

    #[test]
    fn margin_only_cells_have_zero_fraction() {
        let cfg = grid_10x10();
        // Run just inside row 4: row 5 is captured through the positional
        // margin without containing any samples.
        let edge = edge_from(vec![(48.00501, 11.0015), (48.00501, 11.0045)]);
        let cells = intersecting_cells(&edge, &cfg, &JoinParams::default());
        let rows: BTreeSet<usize> = cells.iter().map(|c| c.row).collect();
        assert!(rows.contains(&4) && rows.contains(&5), "rows seen: {rows:?}");
        assert!(cells
            .iter()
            .filter(|c| c.row == 4)
            .any(|c| c.fraction > 0.0));
        assert!(cells
            .iter()
            .filter(|c| c.row == 5)
            .all(|c| c.fraction == 0.0));
    }

    #[test]
    fn cell_set_independent_of_step() {
        let cfg = grid_10x10();
        let edge = edge_from(vec![(48.0007, 11.0023), (48.0081, 11.0092)]);
        let coarse = intersecting_cells(&edge, &cfg, &JoinParams { step: 0.00025, ..JoinParams::default() });
        let fine = intersecting_cells(&edge, &cfg, &JoinParams { step: 0.000025, ..JoinParams::default() });
        let coarse_set: BTreeSet<_> = coarse.iter().map(|c| (c.row, c.col, c.heading)).collect();
        let fine_set: BTreeSet<_> = fine.iter().map(|c| (c.row, c.col, c.heading)).collect();
        assert_eq!(coarse_set, fine_set);
    }

    #[test]
    fn intersections_csv_roundtrip() {
        let cfg = grid_10x10();
        let edge = edge_from(vec![(48.0031, 11.0012), (48.0074, 11.0068)]);
        let mut map = IntersectionMap::new();
        map.insert(edge.key(), intersecting_cells(&edge, &cfg, &JoinParams::default()));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("join.csv");
        write_intersections_csv(&map, &path).unwrap();
        let back = read_intersections_csv(&path).unwrap();
        assert_eq!(back, map);
    }
}
