//! Per-edge per-bin segment speeds from aggregated movies via the spatial
//! join, plus congestion-factor based confidence filtering.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::container::atomic_write;
use crate::error::{Error, Result};
use crate::roadgraph::RoadGraph;
use crate::sjoin::{CellFraction, IntersectionMap};
use crate::taggr::AggMovieDay;

/// One per-edge per-bin output row.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecord {
    pub day: NaiveDate,
    pub t: usize,
    pub u: u64,
    pub v: u64,
    pub gkey: u64,
    pub volume: u32,
    pub median_speed_kph: f64,
    pub mean_speed_kph: f64,
    pub std_speed_kph: f64,
    pub filtered: bool,
}

impl SegmentRecord {
    pub fn key(&self) -> (u64, u64, u64) {
        (self.u, self.v, self.gkey)
    }
}

/// Median convention for even-sized speed collections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MedianRule {
    /// Lower of the two central values; never invents a speed that no
    /// cell reported.
    #[default]
    Lower,
    /// Midpoint of the two central values.
    Midpoint,
}

fn median(sorted: &[f64], rule: MedianRule) -> f64 {
    let n = sorted.len();
    let mid = n / 2;
    if n % 2 == 1 {
        sorted[mid]
    } else {
        match rule {
            MedianRule::Lower => sorted[mid - 1],
            MedianRule::Midpoint => (sorted[mid - 1] + sorted[mid]) / 2.0,
        }
    }
}

/// Segment speed of one edge in one aggregated bin: median/mean/population
/// std of the decoded speeds of its intersecting directed cells with data,
/// and the summed volume. `None` when no intersecting cell has data.
pub fn segment_speed(
    key: (u64, u64, u64),
    agg: &AggMovieDay,
    t: usize,
    cells: &[CellFraction],
    rule: MedianRule,
) -> Option<SegmentRecord> {
    let mut speeds = Vec::new();
    let mut volume = 0u32;
    for c in cells {
        if c.row >= agg.rows || c.col >= agg.cols {
            continue;
        }
        volume += agg.volume(t, c.row, c.col, c.heading);
        if let Some(speed) = agg.speed(t, c.row, c.col, c.heading) {
            speeds.push(speed);
        }
    }
    if speeds.is_empty() {
        return None;
    }
    speeds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = speeds.len() as f64;
    let mean = speeds.iter().sum::<f64>() / n;
    let var = speeds.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Some(SegmentRecord {
        day: agg.day,
        t,
        u: key.0,
        v: key.1,
        gkey: key.2,
        volume,
        median_speed_kph: median(&speeds, rule),
        mean_speed_kph: mean,
        std_speed_kph: var.sqrt(),
        filtered: false,
    })
}

/// Congestion factor cf = ssp / ff; the free-flow speed must be positive.
pub fn congestion_factor(ssp: f64, ff: f64) -> Result<f64> {
    if !(ff > 0.0) {
        return Err(Error::NonPositiveFreeFlow(ff));
    }
    Ok(ssp / ff)
}

/// How the volume/congestion cascade is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterInterpretation {
    /// Volume and congestion thresholds pair up: filtered iff
    /// (cf < 0.4 and vol < 5) or (cf < 0.8 and vol < 3) or vol < 1.
    #[default]
    Paired,
    /// The cascade read literally: filtered iff vol < 5 or cf < 0.4
    /// (the later branches are unreachable).
    Verbatim,
}

/// Confidence filter thresholds. Volumes are compared against the
/// aggregated decoded volume sum of the record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub interpretation: FilterInterpretation,
    /// (volume threshold, congestion-factor threshold) pairs, strictly
    /// decreasing in volume.
    pub pairs: [(u32, f64); 2],
    /// Records below this volume are always filtered.
    pub min_volume: u32,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            interpretation: FilterInterpretation::Paired,
            pairs: [(5, 0.4), (3, 0.8)],
            min_volume: 1,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<()> {
        let (v1, v2) = (self.pairs[0].0, self.pairs[1].0);
        if !(v1 > v2 && v2 > self.min_volume) {
            return Err(Error::InvalidFilterPolicy(format!(
                "volume thresholds must be strictly ordered, got {v1} > {v2} > {}",
                self.min_volume
            )));
        }
        Ok(())
    }

    pub fn verbatim() -> Self {
        FilterPolicy {
            interpretation: FilterInterpretation::Verbatim,
            ..FilterPolicy::default()
        }
    }

    fn rejects(&self, volume: u32, cf: f64) -> bool {
        let [(v1, c1), (v2, c2)] = self.pairs;
        match self.interpretation {
            FilterInterpretation::Paired => {
                (cf < c1 && volume < v1) || (cf < c2 && volume < v2) || volume < self.min_volume
            }
            FilterInterpretation::Verbatim => volume < v1 || cf < c1,
        }
    }
}

/// Apply the confidence filter to a record; rejected records keep their
/// values with the `filtered` flag set, passing records come back
/// unchanged.
pub fn confidence_filter(
    record: &SegmentRecord,
    ff: f64,
    policy: &FilterPolicy,
) -> Result<SegmentRecord> {
    let cf = congestion_factor(record.median_speed_kph, ff)?;
    let mut out = record.clone();
    out.filtered = policy.rejects(record.volume, cf);
    Ok(out)
}

/// All segment records of one aggregated day. Free-flow speeds (optionally
/// normalized against the edge speed limit) drive the filter when a policy
/// is given; without one every record passes.
pub fn day_segment_records(
    graph: &RoadGraph,
    agg: &AggMovieDay,
    intersections: &IntersectionMap,
    free_flow: Option<&BTreeMap<(u64, u64, u64), f64>>,
    policy: Option<&FilterPolicy>,
    normalize: bool,
    rule: MedianRule,
) -> Result<Vec<SegmentRecord>> {
    let mut out = Vec::new();
    for edge in &graph.edges {
        let Some(cells) = intersections.get(&edge.key()) else {
            continue;
        };
        for t in 0..agg.bins {
            let Some(record) = segment_speed(edge.key(), agg, t, cells, rule) else {
                continue;
            };
            let record = match policy {
                None => record,
                Some(policy) => {
                    let ff_raw = free_flow
                        .and_then(|m| m.get(&edge.key()).copied())
                        .unwrap_or(crate::freeflow::FREE_FLOW_DEFAULT_KPH);
                    let ff = if normalize {
                        crate::freeflow::normalize_free_flow(ff_raw, edge.speed_kph)
                    } else {
                        ff_raw
                    };
                    confidence_filter(&record, ff, policy)?
                }
            };
            out.push(record);
        }
    }
    Ok(out)
}

const SEGMENT_CSV_HEADER: [&str; 10] = [
    "day",
    "t",
    "u",
    "v",
    "gkey",
    "volume",
    "median_speed_kph",
    "mean_speed_kph",
    "std_speed_kph",
    "filtered",
];

/// Write segment records as CSV with the fixed column set consumed by the
/// comparison tooling.
pub fn write_segments_csv(records: &[SegmentRecord], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(SEGMENT_CSV_HEADER)?;
    for r in records {
        writer.write_record([
            r.day.to_string(),
            r.t.to_string(),
            r.u.to_string(),
            r.v.to_string(),
            r.gkey.to_string(),
            r.volume.to_string(),
            r.median_speed_kph.to_string(),
            r.mean_speed_kph.to_string(),
            r.std_speed_kph.to_string(),
            r.filtered.to_string(),
        ])?;
    }
    let bytes = writer.into_inner().expect("in-memory flush");
    atomic_write(path, &bytes)
}

pub fn read_segments_csv(path: &Path) -> Result<Vec<SegmentRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Csv(e),
    })?;
    let malformed = |reason: String| Error::MalformedRecord {
        path: path.to_path_buf(),
        reason,
    };
    {
        let headers = reader.headers()?.clone();
        let seen: Vec<&str> = headers.iter().collect();
        if seen != SEGMENT_CSV_HEADER {
            return Err(malformed(format!("unexpected header {seen:?}")));
        }
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let get = |i: usize| record.get(i).unwrap_or_default();
        let day: NaiveDate = get(0)
            .parse()
            .map_err(|_| malformed(format!("bad day {:?}", get(0))))?;
        let parse_f = |i: usize| -> Result<f64> {
            get(i)
                .parse()
                .map_err(|_| malformed(format!("bad float {:?} in field {i}", get(i))))
        };
        let parse_u = |i: usize| -> Result<u64> {
            get(i)
                .parse()
                .map_err(|_| malformed(format!("bad int {:?} in field {i}", get(i))))
        };
        out.push(SegmentRecord {
            day,
            t: parse_u(1)? as usize,
            u: parse_u(2)?,
            v: parse_u(3)?,
            gkey: parse_u(4)?,
            volume: parse_u(5)? as u32,
            median_speed_kph: parse_f(6)?,
            mean_speed_kph: parse_f(7)?,
            std_speed_kph: parse_f(8)?,
            filtered: match get(9) {
                "true" => true,
                "false" => false,
                other => return Err(malformed(format!("bad filtered flag {other:?}"))),
            },
        });
    }
    Ok(out)
}
