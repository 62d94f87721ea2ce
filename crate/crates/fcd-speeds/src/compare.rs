//! Comparison of two segment-speed sources: time/edge matching, absolute
//! percentage error, and signed-difference statistics grouped by highway
//! class, segment length or cell-sharing complexity.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::atomic_write;
use crate::error::{Error, Result};
use crate::roadgraph::RoadGraph;
use crate::segspeed::SegmentRecord;
use crate::sjoin::IntersectionMap;

/// Segment length classes: S up to 100 m, M up to 500 m, L above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LengthClass {
    S,
    M,
    L,
}

impl LengthClass {
    pub fn of(length_m: f64) -> LengthClass {
        if length_m <= 100.0 {
            LengthClass::S
        } else if length_m <= 500.0 {
            LengthClass::M
        } else {
            LengthClass::L
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LengthClass::S => "S",
            LengthClass::M => "M",
            LengthClass::L => "L",
        }
    }
}

/// Static per-edge attributes used to group matched pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMeta {
    pub highway: String,
    pub length_m: f64,
    pub complex: bool,
}

/// Edge metadata incl. the complexity flag: an edge is complex when at
/// least one of its intersecting cells is shared by at least 4 further
/// edges.
pub fn segment_meta(
    graph: &RoadGraph,
    intersections: &IntersectionMap,
) -> BTreeMap<(u64, u64, u64), SegmentMeta> {
    let mut edges_per_cell: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    for cells in intersections.values() {
        let mut seen = std::collections::BTreeSet::new();
        for c in cells {
            if seen.insert((c.row, c.col)) {
                *edges_per_cell.entry((c.row, c.col)).or_insert(0) += 1;
            }
        }
    }
    let mut out = BTreeMap::new();
    for edge in &graph.edges {
        let complex = intersections
            .get(&edge.key())
            .map(|cells| {
                cells
                    .iter()
                    .any(|c| edges_per_cell.get(&(c.row, c.col)).copied().unwrap_or(0) >= 5)
            })
            .unwrap_or(false);
        out.insert(
            edge.key(),
            SegmentMeta {
                highway: edge.highway.clone(),
                length_m: edge.length_m,
                complex,
            },
        );
    }
    out
}

/// One matched (edge, time) observation from both sources.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub key: (u64, u64, u64),
    pub t: usize,
    pub speed_a: f64,
    pub speed_b: f64,
    pub highway: String,
    pub length_class: LengthClass,
    pub complex: bool,
}

impl MatchedPair {
    pub fn diff(&self) -> f64 {
        self.speed_a - self.speed_b
    }
}

/// Join two record sets on (edge, time bin), keeping only slots where
/// both sources carry an unfiltered value. With `hour_mean` on, source-a
/// 15-minute bins are first averaged into hours (`bins_per_hour` of them)
/// and joined against source-b records whose `t` is the hour index.
/// Speeds compared are the median segment speeds.
pub fn match_records(
    records_a: &[SegmentRecord],
    records_b: &[SegmentRecord],
    hour_mean: bool,
    bins_per_hour: usize,
    meta: &BTreeMap<(u64, u64, u64), SegmentMeta>,
) -> Vec<MatchedPair> {
    let mut b_by_slot: BTreeMap<((u64, u64, u64), usize), f64> = BTreeMap::new();
    for r in records_b {
        if !r.filtered {
            b_by_slot.insert((r.key(), r.t), r.median_speed_kph);
        }
    }

    let a_values: Vec<((u64, u64, u64), usize, f64)> = if hour_mean {
        let mut grouped: BTreeMap<((u64, u64, u64), usize), (f64, u32)> = BTreeMap::new();
        for r in records_a {
            if !r.filtered {
                let entry = grouped
                    .entry((r.key(), r.t / bins_per_hour.max(1)))
                    .or_insert((0.0, 0));
                entry.0 += r.median_speed_kph;
                entry.1 += 1;
            }
        }
        grouped
            .into_iter()
            .map(|((key, hour), (sum, n))| (key, hour, sum / n as f64))
            .collect()
    } else {
        records_a
            .iter()
            .filter(|r| !r.filtered)
            .map(|r| (r.key(), r.t, r.median_speed_kph))
            .collect()
    };

    let mut out = Vec::new();
    for (key, t, speed_a) in a_values {
        let Some(&speed_b) = b_by_slot.get(&(key, t)) else {
            continue;
        };
        let Some(m) = meta.get(&key) else { continue };
        out.push(MatchedPair {
            key,
            t,
            speed_a,
            speed_b,
            highway: m.highway.clone(),
            length_class: LengthClass::of(m.length_m),
            complex: m.complex,
        });
    }
    out
}

/// Absolute percentage error 100 * |pred - ref| / ref.
pub fn ape(pred: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) {
        return Err(Error::NonPositiveReference(reference));
    }
    Ok(100.0 * (pred - reference).abs() / reference)
}

/// Share of pairs whose APE (a vs b) stays below `threshold_percent`.
pub fn ape_share_below(pairs: &[MatchedPair], threshold_percent: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for p in pairs {
        if ape(p.speed_a, p.speed_b)? < threshold_percent {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Highway,
    Length,
    Complexity,
}

impl std::str::FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "highway" => Ok(GroupBy::Highway),
            "length" => Ok(GroupBy::Length),
            "complexity" => Ok(GroupBy::Complexity),
            other => Err(format!(
                "unknown grouping {other:?} (highway|length|complexity)"
            )),
        }
    }
}

/// Signed-difference statistics of one group of pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub group: String,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub count: usize,
}

fn stats_of(diffs: &mut [f64], group: String) -> StatsRow {
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = diffs.len() / 2;
    // Midpoint median keeps diff stats antisymmetric under source swap.
    let median = if diffs.len() % 2 == 1 {
        diffs[mid]
    } else {
        (diffs[mid - 1] + diffs[mid]) / 2.0
    };
    StatsRow {
        group,
        mean,
        std: var.sqrt(),
        median,
        count: diffs.len(),
    }
}

/// Per-group and TOTAL rows of mean / population std / median of the
/// signed speed differences (a - b).
pub fn diff_stats(pairs: &[MatchedPair], group_by: GroupBy) -> Vec<StatsRow> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for p in pairs {
        let group = match group_by {
            GroupBy::Highway => p.highway.clone(),
            GroupBy::Length => p.length_class.as_str().to_string(),
            GroupBy::Complexity => if p.complex { "complex" } else { "non_complex" }.to_string(),
        };
        groups.entry(group).or_default().push(p.diff());
    }
    let mut rows: Vec<StatsRow> = groups
        .into_iter()
        .map(|(group, mut diffs)| stats_of(&mut diffs, group))
        .collect();
    if !pairs.is_empty() {
        let mut all: Vec<f64> = pairs.iter().map(|p| p.diff()).collect();
        rows.push(stats_of(&mut all, "TOTAL".to_string()));
    }
    rows
}

/// 2-D histogram of (speed_a, speed_b) over `nbins` equal-width bins per
/// axis, spanning [0, max speed seen].
pub fn speed_histogram(pairs: &[MatchedPair], nbins: usize) -> (f64, Vec<Vec<u64>>) {
    let mut counts = vec![vec![0u64; nbins]; nbins];
    let top = pairs
        .iter()
        .flat_map(|p| [p.speed_a, p.speed_b])
        .fold(0.0f64, f64::max)
        .max(1e-9);
    for p in pairs {
        let bin = |v: f64| (((v / top) * nbins as f64).floor() as usize).min(nbins - 1);
        counts[bin(p.speed_a)][bin(p.speed_b)] += 1;
    }
    (top, counts)
}

/// Write the stats table as CSV with columns group,diff_mean,diff_std,diff_median,count.
pub fn write_stats_csv(rows: &[StatsRow], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["group", "diff_mean", "diff_std", "diff_median", "count"])?;
    for r in rows {
        writer.write_record([
            r.group.clone(),
            r.mean.to_string(),
            r.std.to_string(),
            r.median.to_string(),
            r.count.to_string(),
        ])?;
    }
    let bytes = writer.into_inner().expect("in-memory flush");
    atomic_write(path, &bytes)
}

/// Write the 10-bin histogram as CSV with columns bin_a,bin_b,a_center,b_center,count.
pub fn write_histogram_csv(pairs: &[MatchedPair], nbins: usize, path: &Path) -> Result<()> {
    let (top, counts) = speed_histogram(pairs, nbins);
    let width = top / nbins as f64;
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["bin_a", "bin_b", "a_center_kph", "b_center_kph", "count"])?;
    for (i, row) in counts.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            writer.write_record([
                i.to_string(),
                j.to_string(),
                ((i as f64 + 0.5) * width).to_string(),
                ((j as f64 + 0.5) * width).to_string(),
                count.to_string(),
            ])?;
        }
    }
    let bytes = writer.into_inner().expect("in-memory flush");
    atomic_write(path, &bytes)
}

/// Human-readable comparison report.
pub fn write_report(
    pairs: &[MatchedPair],
    rows: &[StatsRow],
    group_by: GroupBy,
    path: &Path,
) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "matched pairs: {}", pairs.len());
    let share = ape_share_below(pairs, 15.0)?;
    let _ = writeln!(text, "APE < 15%: {:.1}% of pairs", share * 100.0);
    let _ = writeln!(text, "diff stats (speed_a - speed_b) by {group_by:?}:");
    let _ = writeln!(
        text,
        "{:<16} {:>10} {:>10} {:>10} {:>8}",
        "group", "mean", "std", "median", "count"
    );
    for r in rows {
        let _ = writeln!(
            text,
            "{:<16} {:>10.3} {:>10.3} {:>10.3} {:>8}",
            r.group, r.mean, r.std, r.median, r.count
        );
    }
    atomic_write(path, text.as_bytes())
}
