//! Synthetic fleet generator and independent oracles: constant-speed
//! vehicles emitting probes at a speed-dependent rate, a brute-force
//! re-binning path, the harmonic mean, and coverage split by edge
//! orientation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::atomic_write;
use crate::error::{Error, Result};
use crate::grid::{EncodingParams, GridConfig, Heading, SPEED_CAP_KPH};
use crate::roadgraph::{haversine_m, RoadGraph};
use crate::segspeed::SegmentRecord;
use crate::sjoin::bearing_deg;
use crate::spotbin::{MovieDay, Probe};

/// Vehicles of one constant speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleClass {
    pub speed_kph: f64,
    pub count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeKey {
    pub u: u64,
    pub v: u64,
    pub gkey: u64,
}

/// A fleet of constant-speed vehicles traversing one edge within a time
/// window. Each vehicle emits `round(probe_constant / speed)` probes
/// evenly spaced in time across its traversal (so slower vehicles emit
/// proportionally more), unless `equal_counts` overrides the rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub classes: Vec<VehicleClass>,
    pub probe_constant: f64,
    pub route: EdgeKey,
    /// (start, end) in seconds of day; every traversal must fit inside.
    pub window: (f64, f64),
    /// Uniform angular noise added to the emitted probe angles.
    #[serde(default)]
    pub angle_jitter_deg: f64,
    /// When set, every vehicle emits exactly this many probes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equal_counts: Option<u32>,
}

/// Scenario file: one day of fleets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub day: NaiveDate,
    pub fleets: Vec<FleetSpec>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self).map_err(|e| Error::json(path, e))?;
        bytes.push(b'\n');
        atomic_write(path, &bytes)
    }
}

// Position and leg bearing at a given arc length (meters) along a polyline.
fn point_at_arc(geometry: &[(f64, f64)], arc_m: f64) -> (f64, f64, f64) {
    let mut remaining = arc_m.max(0.0);
    let mut last = (geometry[0], geometry[1]);
    for w in geometry.windows(2) {
        let leg = haversine_m(w[0], w[1]);
        if leg == 0.0 {
            continue;
        }
        last = (w[0], w[1]);
        if remaining <= leg {
            let f = remaining / leg;
            let lat = w[0].0 + (w[1].0 - w[0].0) * f;
            let lon = w[0].1 + (w[1].1 - w[0].1) * f;
            return (lat, lon, bearing_deg(w[0], w[1]));
        }
        remaining -= leg;
    }
    let (p, q) = last;
    (q.0, q.1, bearing_deg(p, q))
}

/// Emit the probes of one fleet. Vehicle starts are staggered evenly
/// across the window slack; probe positions follow the edge geometry at
/// the arc length corresponding to each probe time.
pub fn simulate_probes(
    spec: &FleetSpec,
    graph: &RoadGraph,
    cfg: &GridConfig,
    seed: u64,
) -> Result<Vec<Probe>> {
    let edge = graph
        .edge((spec.route.u, spec.route.v, spec.route.gkey))
        .ok_or(Error::UnknownEdge(spec.route.u, spec.route.v, spec.route.gkey))?;
    for &(lat, lon) in &edge.geometry {
        if !cfg.contains(lat, lon) {
            return Err(Error::InvalidFleetSpec(format!(
                "route edge ({}, {}, {}) leaves the bounding box at ({lat}, {lon})",
                spec.route.u, spec.route.v, spec.route.gkey
            )));
        }
    }
    let (w_start, w_end) = spec.window;
    if !(w_end > w_start) || w_start < 0.0 || w_end > crate::grid::SECONDS_PER_DAY {
        return Err(Error::InvalidFleetSpec(format!(
            "bad window ({w_start}, {w_end})"
        )));
    }
    if !(spec.probe_constant > 0.0) && spec.equal_counts.is_none() {
        return Err(Error::InvalidFleetSpec(
            "probe_constant must be > 0".into(),
        ));
    }

    let total_vehicles: u32 = spec.classes.iter().map(|c| c.count).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::new();
    let mut vehicle_index = 0u32;
    for class in &spec.classes {
        if !(class.speed_kph > 0.0) {
            return Err(Error::InvalidFleetSpec(format!(
                "non-positive vehicle speed {}",
                class.speed_kph
            )));
        }
        let readings = match spec.equal_counts {
            Some(r) => r,
            None => (spec.probe_constant / class.speed_kph).round() as u32,
        };
        if readings == 0 {
            return Err(Error::InvalidFleetSpec(format!(
                "vehicle at {} kph would emit zero probes",
                class.speed_kph
            )));
        }
        // kph -> m/s is v / 3.6.
        let duration = edge.length_m * 3.6 / class.speed_kph;
        let slack = (w_end - w_start) - duration;
        if slack < 0.0 {
            return Err(Error::InvalidFleetSpec(format!(
                "window too short: traversal at {} kph takes {duration:.1}s",
                class.speed_kph
            )));
        }
        for _ in 0..class.count {
            let frac = (vehicle_index as f64 + 0.5) / total_vehicles as f64;
            let start = w_start + slack * frac;
            for j in 0..readings {
                let pos = (j as f64 + 0.5) / readings as f64;
                let (lat, lon, bearing) = point_at_arc(&edge.geometry, pos * edge.length_m);
                let angle = if spec.angle_jitter_deg > 0.0 {
                    let jitter =
                        rng.gen_range(-spec.angle_jitter_deg..spec.angle_jitter_deg);
                    crate::grid::normalize_angle(bearing + jitter)
                } else {
                    bearing
                };
                probes.push(Probe {
                    t: start + pos * duration,
                    lat,
                    lon,
                    angle,
                    speed: class.speed_kph,
                });
            }
            vehicle_index += 1;
        }
    }
    Ok(probes)
}

/// Probes of all fleets of a scenario; every fleet draws from the same
/// seed so structurally identical fleets share their noise sequence.
pub fn simulate_scenario(
    scenario: &Scenario,
    graph: &RoadGraph,
    cfg: &GridConfig,
    seed: u64,
) -> Result<Vec<Probe>> {
    let mut probes = Vec::new();
    for fleet in &scenario.fleets {
        probes.extend(simulate_probes(fleet, graph, cfg, seed)?);
    }
    Ok(probes)
}

/// Harmonic mean n / sum(1/v) of a positive speed multiset.
pub fn harmonic_mean(speeds: &[f64]) -> Result<f64> {
    if speeds.is_empty() {
        return Err(Error::NonPositiveSpeed(f64::NAN));
    }
    let mut reciprocal_sum = 0.0;
    for &v in speeds {
        if !(v > 0.0) {
            return Err(Error::NonPositiveSpeed(v));
        }
        reciprocal_sum += 1.0 / v;
    }
    Ok(speeds.len() as f64 / reciprocal_sum)
}

/// Raw per-bin count and mean clipped speed, computed by an independent
/// sort-and-group scan rather than tensor accumulation.
pub fn brute_force_bin(
    probes: &[Probe],
    cfg: &GridConfig,
) -> BTreeMap<(usize, usize, usize, Heading), (u32, f64)> {
    let mut keyed: Vec<((usize, usize, usize, Heading), f64)> = Vec::new();
    for p in probes {
        if !(p.t.is_finite() && p.lat.is_finite() && p.lon.is_finite() && p.angle.is_finite())
            || !p.speed.is_finite()
            || p.speed < 0.0
            || p.t < 0.0
            || p.t >= crate::grid::SECONDS_PER_DAY
        {
            continue;
        }
        if !cfg.contains(p.lat, p.lon) {
            continue;
        }
        let bin = ((p.t / (crate::grid::SECONDS_PER_DAY / cfg.bins_per_day as f64)).floor()
            as usize)
            .min(cfg.bins_per_day - 1);
        let row = (((cfg.lat_max - p.lat) / cfg.cell_size).floor() as usize).min(cfg.rows - 1);
        let col = (((p.lon - cfg.lon_min) / cfg.cell_size).floor() as usize).min(cfg.cols - 1);
        let angle = crate::grid::normalize_angle(p.angle);
        let heading = if angle < 90.0 {
            Heading::NE
        } else if angle < 180.0 {
            Heading::SE
        } else if angle < 270.0 {
            Heading::SW
        } else {
            Heading::NW
        };
        keyed.push(((bin, row, col, heading), p.speed.min(SPEED_CAP_KPH).max(0.0)));
    }
    // Stable sort keeps the original probe order within each key, so sums
    // accumulate in the same order as the tensor path.
    keyed.sort_by_key(|(key, _)| *key);
    let mut out = BTreeMap::new();
    let mut i = 0;
    while i < keyed.len() {
        let key = keyed[i].0;
        let mut count = 0u32;
        let mut sum = 0.0f64;
        while i < keyed.len() && keyed[i].0 == key {
            count += 1;
            sum += keyed[i].1;
            i += 1;
        }
        out.insert(key, (count, sum / count as f64));
    }
    out
}

/// Movie built from [`brute_force_bin`] with the encoding formulas
/// re-evaluated inline per bin; the second route of the binning check.
pub fn brute_force_movie(
    probes: &[Probe],
    day: NaiveDate,
    cfg: &GridConfig,
    enc: &EncodingParams,
) -> MovieDay {
    let mut movie = MovieDay::zeros(day, cfg);
    for (&(bin, row, col, heading), &(count, mean)) in &brute_force_bin(probes, cfg) {
        let clipped = (count as f64 - enc.privacy_threshold as f64)
            .max(0.0)
            .min(enc.volume_cutoff as f64);
        let vol = (clipped * 255.0 / enc.volume_scale_divisor as f64)
            .round()
            .min(255.0) as u8;
        let speed = if vol > 0 {
            ((mean.max(0.0).min(SPEED_CAP_KPH) * 255.0 / SPEED_CAP_KPH).round() as u8).max(1)
        } else {
            0
        };
        movie.set(bin, row, col, 2 * heading.index(), vol);
        movie.set(bin, row, col, 2 * heading.index() + 1, speed);
    }
    movie
}

/// Orientation class of an edge bearing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrientationClass {
    Axis,
    Diagonal,
    Other,
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Classify an edge by its endpoint-to-endpoint bearing: along the
/// N/E/S/W axes or along the diagonals, up to `ang_window` degrees.
pub fn orientation_class(geometry: &[(f64, f64)], ang_window: f64) -> OrientationClass {
    let first = geometry[0];
    let last = *geometry.last().unwrap();
    if first == last {
        return OrientationClass::Other;
    }
    let bearing = bearing_deg(first, last);
    if [0.0, 90.0, 180.0, 270.0]
        .iter()
        .any(|&axis| circular_distance(bearing, axis) <= ang_window)
    {
        OrientationClass::Axis
    } else if [45.0, 135.0, 225.0, 315.0]
        .iter()
        .any(|&diag| circular_distance(bearing, diag) <= ang_window)
    {
        OrientationClass::Diagonal
    } else {
        OrientationClass::Other
    }
}

/// Temporal coverage (share of (edge, bin) slots with an unfiltered speed
/// value) split into axis-aligned and diagonal edges.
pub fn coverage_by_orientation(
    records: &[SegmentRecord],
    graph: &RoadGraph,
    bins: usize,
    ang_window: f64,
) -> (f64, f64) {
    let mut axis_edges = BTreeSet::new();
    let mut diag_edges = BTreeSet::new();
    for edge in &graph.edges {
        match orientation_class(&edge.geometry, ang_window) {
            OrientationClass::Axis => {
                axis_edges.insert(edge.key());
            }
            OrientationClass::Diagonal => {
                diag_edges.insert(edge.key());
            }
            OrientationClass::Other => {}
        }
    }
    let mut covered: BTreeSet<((u64, u64, u64), usize)> = BTreeSet::new();
    for r in records {
        if !r.filtered {
            covered.insert((r.key(), r.t));
        }
    }
    let coverage = |edges: &BTreeSet<(u64, u64, u64)>| -> f64 {
        if edges.is_empty() || bins == 0 {
            return 0.0;
        }
        let hits = covered
            .iter()
            .filter(|(key, _)| edges.contains(key))
            .count();
        hits as f64 / (edges.len() * bins) as f64
    };
    (coverage(&axis_edges), coverage(&diag_edges))
}
