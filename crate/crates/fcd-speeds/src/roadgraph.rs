//! Portable directed road graph: JSON ingestion, maxspeed resolution,
//! geometry hashing and haversine lengths.
//!
//! The graph file replaces a live map download; any directed multigraph
//! with per-edge polylines can be brought into this form.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::atomic_write;
use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Directed edge keyed by (u, v, gkey); parallel edges between the same
/// nodes differ in the geometry hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: u64,
    pub v: u64,
    pub gkey: u64,
    /// Ordered (lat, lon) polyline with at least two points.
    pub geometry: Vec<(f64, f64)>,
    pub highway: String,
    pub speed_kph: f64,
    pub length_m: f64,
}

impl Edge {
    pub fn key(&self) -> (u64, u64, u64) {
        (self.u, self.v, self.gkey)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoadGraph {
    pub nodes: BTreeMap<u64, (f64, f64)>,
    pub edges: Vec<Edge>,
}

impl RoadGraph {
    pub fn edge(&self, key: (u64, u64, u64)) -> Option<&Edge> {
        self.edges.iter().find(|e| e.key() == key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxspeedPolicy {
    Mean,
    Max,
}

impl std::str::FromStr for MaxspeedPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mean" => Ok(MaxspeedPolicy::Mean),
            "max" => Ok(MaxspeedPolicy::Max),
            other => Err(format!("unknown maxspeed policy {other:?} (mean|max)")),
        }
    }
}

/// Options applied while loading a graph file.
#[derive(Debug, Clone)]
pub struct GraphOptions {
    pub maxspeed_policy: MaxspeedPolicy,
    /// Per-highway-class speed defaults used when an edge carries no
    /// maxspeed values. These are stand-in values and fully configurable.
    pub default_speeds: BTreeMap<String, f64>,
    /// Fallback for classes absent from the table.
    pub fallback_kph: f64,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            maxspeed_policy: MaxspeedPolicy::Mean,
            default_speeds: default_speed_table(),
            fallback_kph: 50.0,
        }
    }
}

/// Shipped per-class default speed limits in kph.
pub fn default_speed_table() -> BTreeMap<String, f64> {
    [
        ("motorway", 120.0),
        ("motorway_link", 60.0),
        ("trunk", 100.0),
        ("trunk_link", 50.0),
        ("primary", 60.0),
        ("primary_link", 40.0),
        ("secondary", 50.0),
        ("secondary_link", 40.0),
        ("tertiary", 50.0),
        ("tertiary_link", 40.0),
        ("unclassified", 40.0),
        ("residential", 30.0),
        ("living_street", 10.0),
        ("service", 20.0),
        ("road", 40.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Resolve a possibly-empty list of raw maxspeed values: the mean policy
/// averages, the max policy takes the maximum, and an empty list falls
/// back to the per-class default table.
pub fn resolve_maxspeed(
    raw: &[f64],
    highway: &str,
    policy: MaxspeedPolicy,
    opts: &GraphOptions,
) -> Result<f64> {
    for &v in raw {
        if !(v > 0.0) {
            return Err(Error::NonPositiveMaxspeed(v));
        }
    }
    if raw.is_empty() {
        return Ok(opts
            .default_speeds
            .get(highway)
            .copied()
            .unwrap_or(opts.fallback_kph));
    }
    Ok(match policy {
        MaxspeedPolicy::Mean => raw.iter().sum::<f64>() / raw.len() as f64,
        MaxspeedPolicy::Max => raw.iter().copied().fold(f64::MIN, f64::max),
    })
}

/// Stable 64-bit FNV-1a hash of the raw coordinate doubles. Deterministic
/// across runs and platforms.
pub fn gkey(geometry: &[(f64, f64)]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for &(lat, lon) in geometry {
        for b in lat.to_le_bytes().into_iter().chain(lon.to_le_bytes()) {
            hash ^= b as u64;
            hash = hash.wrapping_mul(PRIME);
        }
    }
    hash
}

/// Great-circle distance between two (lat, lon) points in meters.
pub fn haversine_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let s = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * s.sqrt().asin()
}

/// Sum of haversine leg lengths along a polyline.
pub fn polyline_length_m(geometry: &[(f64, f64)]) -> f64 {
    geometry.windows(2).map(|w| haversine_m(w[0], w[1])).sum()
}

#[derive(Deserialize)]
struct GraphFile {
    nodes: Vec<GraphFileNode>,
    edges: Vec<GraphFileEdge>,
}

#[derive(Deserialize)]
struct GraphFileNode {
    id: u64,
    lat: f64,
    lon: f64,
}

#[derive(Deserialize)]
struct GraphFileEdge {
    u: u64,
    v: u64,
    geometry: Vec<(f64, f64)>,
    highway: String,
    #[serde(default)]
    maxspeed: Option<Vec<f64>>,
}

const ENDPOINT_TOL_DEG: f64 = 1e-9;

/// Load and validate a graph file, resolving speed limits, geometry keys
/// and haversine lengths.
pub fn load_graph(path: &Path, opts: &GraphOptions) -> Result<RoadGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: GraphFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;

    let mut nodes = BTreeMap::new();
    for n in &file.nodes {
        nodes.insert(n.id, (n.lat, n.lon));
    }

    let mut seen = BTreeSet::new();
    let mut edges = Vec::with_capacity(file.edges.len());
    for e in file.edges {
        let from = *nodes
            .get(&e.u)
            .ok_or(Error::DanglingNode { u: e.u, v: e.v, node: e.u })?;
        let to = *nodes
            .get(&e.v)
            .ok_or(Error::DanglingNode { u: e.u, v: e.v, node: e.v })?;
        if e.geometry.len() < 2 {
            return Err(Error::DegenerateGeometry {
                u: e.u,
                v: e.v,
                points: e.geometry.len(),
            });
        }
        let first = e.geometry[0];
        let last = *e.geometry.last().unwrap();
        let close = |a: (f64, f64), b: (f64, f64)| {
            (a.0 - b.0).abs() <= ENDPOINT_TOL_DEG && (a.1 - b.1).abs() <= ENDPOINT_TOL_DEG
        };
        if !close(first, from) || !close(last, to) {
            return Err(Error::GeometryEndpointMismatch { u: e.u, v: e.v });
        }
        let key = gkey(&e.geometry);
        if !seen.insert((e.u, e.v, key)) {
            return Err(Error::DuplicateEdge { u: e.u, v: e.v, gkey: key });
        }
        let length_m = polyline_length_m(&e.geometry);
        if !(length_m > 0.0) {
            return Err(Error::ZeroLengthEdge { u: e.u, v: e.v });
        }
        let speed_kph = resolve_maxspeed(
            e.maxspeed.as_deref().unwrap_or(&[]),
            &e.highway,
            opts.maxspeed_policy,
            opts,
        )?;
        edges.push(Edge {
            u: e.u,
            v: e.v,
            gkey: key,
            geometry: e.geometry,
            highway: e.highway,
            speed_kph,
            length_m,
        });
    }
    Ok(RoadGraph { nodes, edges })
}

/// Write a resolved graph (gkeys, lengths and speeds filled in) as JSON.
pub fn write_resolved_graph(graph: &RoadGraph, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(graph).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

/// Read a graph previously written by [`write_resolved_graph`].
pub fn read_resolved_graph(path: &Path) -> Result<RoadGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
