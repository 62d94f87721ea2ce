//! Pipeline orchestration: stage execution over file artifacts, config
//! handling, and the synthetic end-to-end demo.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::compare::{self, GroupBy};
use crate::container::atomic_write;
use crate::error::{Error, Result};
use crate::fcdsim::{self, EdgeKey, FleetSpec, Scenario, VehicleClass};
use crate::freeflow::{self, CLUSTERS_PER_CELL};
use crate::grid::{EncodingParams, GridConfig, GridConfigFile, Heading};
use crate::roadgraph::{self, GraphOptions, MaxspeedPolicy, RoadGraph};
use crate::segspeed::{self, FilterPolicy, MedianRule, SegmentRecord};
use crate::sjoin::{self, JoinParams};
use crate::spotbin;
use crate::taggr;

/// Whether and how dp06b filters records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    #[default]
    Paired,
    Verbatim,
    Off,
}

impl std::str::FromStr for FilterMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "paired" => Ok(FilterMode::Paired),
            "verbatim" => Ok(FilterMode::Verbatim),
            "off" => Ok(FilterMode::Off),
            other => Err(format!("unknown filter mode {other:?} (paired|verbatim|off)")),
        }
    }
}

impl FilterMode {
    pub fn policy(self) -> Option<FilterPolicy> {
        match self {
            FilterMode::Paired => Some(FilterPolicy::default()),
            FilterMode::Verbatim => Some(FilterPolicy::verbatim()),
            FilterMode::Off => None,
        }
    }
}

/// One city pipeline run: grid, parameters, seed and artifact locations.
/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub city: String,
    pub grid: GridConfigFile,
    #[serde(default)]
    pub join: JoinParams,
    #[serde(default)]
    pub filter: FilterMode,
    #[serde(default)]
    pub normalize_freeflow: bool,
    #[serde(default = "default_maxspeed_policy")]
    pub maxspeed_policy: MaxspeedPolicy,
    #[serde(default)]
    pub median_rule: MedianRule,
    pub seed: u64,
    #[serde(default = "default_agg_factor")]
    pub agg_factor: usize,
    pub graph_file: PathBuf,
    pub probe_dir: PathBuf,
    pub output_dir: PathBuf,
}

fn default_maxspeed_policy() -> MaxspeedPolicy {
    MaxspeedPolicy::Mean
}

fn default_agg_factor() -> usize {
    3
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if let Some(base) = path.parent() {
            for p in [&mut cfg.graph_file, &mut cfg.probe_dir, &mut cfg.output_dir] {
                if p.is_relative() {
                    *p = base.join(&p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self).map_err(|e| Error::json(path, e))?;
        bytes.push(b'\n');
        atomic_write(path, &bytes)
    }

    pub fn build_grid(&self) -> Result<(GridConfig, EncodingParams)> {
        self.grid.build()
    }

    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            maxspeed_policy: self.maxspeed_policy,
            ..GraphOptions::default()
        }
    }

    pub fn movies_dir(&self) -> PathBuf {
        self.output_dir.join("movies")
    }

    pub fn agg_dir(&self) -> PathBuf {
        self.output_dir.join("agg")
    }

    pub fn speeds_dir(&self) -> PathBuf {
        self.output_dir.join("speeds")
    }

    pub fn graph_artifact(&self) -> PathBuf {
        self.output_dir.join("graph.json")
    }

    pub fn join_artifact(&self) -> PathBuf {
        self.output_dir.join("join.csv")
    }

    pub fn clusters_artifact(&self) -> PathBuf {
        self.output_dir.join("clusters.tensor")
    }

    pub fn freeflow_artifact(&self) -> PathBuf {
        self.output_dir.join("freeflow.csv")
    }

    /// Aggregated bins per hour (4 at the default 15-minute resolution).
    pub fn bins_per_hour(&self) -> usize {
        (self.grid.bins_per_day / self.agg_factor / 24).max(1)
    }
}

/// The dp-numbered processing stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// dp01: temporal aggregation of movie days.
    Aggregate,
    /// dp02: per-cell speed clustering.
    Cluster,
    /// dp03-load: road graph ingestion and validation.
    LoadGraph,
    /// dp04: spatial join of edges and cells.
    Join,
    /// dp05: per-edge free-flow speeds.
    FreeFlow,
    /// dp06: segment speeds and confidence filtering.
    Speeds,
}

impl Stage {
    pub fn dp_name(self) -> &'static str {
        match self {
            Stage::Aggregate => "dp01",
            Stage::Cluster => "dp02",
            Stage::LoadGraph => "dp03-load",
            Stage::Join => "dp04",
            Stage::FreeFlow => "dp05",
            Stage::Speeds => "dp06",
        }
    }

    pub fn subcommand(self) -> &'static str {
        match self {
            Stage::Aggregate => "aggregate",
            Stage::Cluster => "cluster",
            Stage::LoadGraph | Stage::Join => "join",
            Stage::FreeFlow => "freeflow",
            Stage::Speeds => "speeds",
        }
    }
}

fn require(path: &Path, produced_by: Stage) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            stage: produced_by.dp_name(),
            subcommand: produced_by.subcommand(),
            path: path.to_path_buf(),
        })
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Files with the given extension, sorted by name for determinism.
fn sorted_files(dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some(extension) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn day_from_stem(path: &Path) -> Result<NaiveDate> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    stem.parse().map_err(|_| Error::MalformedRecord {
        path: path.to_path_buf(),
        reason: format!("file stem {stem:?} is not a date (expected YYYY-MM-DD)"),
    })
}

/// Spot-bin every probe CSV in the probe dir into a movie file
/// (one `<day>.csv` becomes one `movies/<day>.movie`).
pub fn run_bin(cfg: &PipelineConfig) -> Result<String> {
    let (grid, enc) = cfg.build_grid()?;
    let probe_files = sorted_files(&cfg.probe_dir, "csv")?;
    if probe_files.is_empty() {
        return Err(Error::MissingArtifact {
            stage: "input",
            subcommand: "simulate",
            path: cfg.probe_dir.clone(),
        });
    }
    ensure_dir(&cfg.movies_dir())?;
    let mut total = spotbin::BinReport::default();
    for path in &probe_files {
        let day = day_from_stem(path)?;
        let probes = spotbin::read_probes_csv(path)?;
        let (movie, report) = spotbin::bin_probes(&probes, day, &grid, &enc);
        spotbin::write_movie(&movie, &enc, &cfg.movies_dir().join(format!("{day}.movie")))?;
        total.binned += report.binned;
        total.out_of_box += report.out_of_box;
        total.rejected += report.rejected;
    }
    Ok(format!(
        "binned {} day(s): {} probes mapped, {} out of box, {} rejected",
        probe_files.len(),
        total.binned,
        total.out_of_box,
        total.rejected
    ))
}

/// Generate probe CSVs from a scenario file.
pub fn run_simulate(cfg: &PipelineConfig, scenario_path: &Path) -> Result<String> {
    let (grid, _) = cfg.build_grid()?;
    let scenario = Scenario::load(scenario_path)?;
    let graph = roadgraph::load_graph(&cfg.graph_file, &cfg.graph_options())?;
    let probes = fcdsim::simulate_scenario(&scenario, &graph, &grid, cfg.seed)?;
    ensure_dir(&cfg.probe_dir)?;
    let name = format!("{}.csv", scenario.day);
    spotbin::write_probes_csv(&probes, &cfg.probe_dir.join(&name))?;
    Ok(format!(
        "simulated {} probes from {} fleet(s) into {name}",
        probes.len(),
        scenario.fleets.len(),
    ))
}

/// Run one dp stage against the configured artifact tree.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<String> {
    match stage {
        Stage::LoadGraph => {
            let graph = roadgraph::load_graph(&cfg.graph_file, &cfg.graph_options())?;
            ensure_dir(&cfg.output_dir)?;
            roadgraph::write_resolved_graph(&graph, &cfg.graph_artifact())?;
            Ok(format!(
                "loaded graph: {} nodes, {} edges",
                graph.nodes.len(),
                graph.edges.len()
            ))
        }
        Stage::Aggregate => {
            let movie_files = sorted_files(&cfg.movies_dir(), "movie")?;
            if movie_files.is_empty() {
                return Err(Error::MissingArtifact {
                    stage: "binning",
                    subcommand: "bin",
                    path: cfg.movies_dir(),
                });
            }
            ensure_dir(&cfg.agg_dir())?;
            for path in &movie_files {
                let (movie, enc) = spotbin::read_movie(path)?;
                let agg = taggr::aggregate(&movie, cfg.agg_factor)?;
                taggr::write_agg(&agg, &enc, &cfg.agg_dir().join(format!("{}.agg", movie.day)))?;
            }
            Ok(format!(
                "aggregated {} day(s) by factor {}",
                movie_files.len(),
                cfg.agg_factor
            ))
        }
        Stage::Cluster => {
            let agg_files = sorted_files(&cfg.agg_dir(), "agg")?;
            if agg_files.is_empty() {
                return Err(Error::MissingArtifact {
                    stage: Stage::Aggregate.dp_name(),
                    subcommand: Stage::Aggregate.subcommand(),
                    path: cfg.agg_dir(),
                });
            }
            let mut days = Vec::new();
            for path in &agg_files {
                days.push(taggr::read_agg(path)?.0);
            }
            let clusters = freeflow::cluster_movies(&days, CLUSTERS_PER_CELL, cfg.seed)?;
            ensure_dir(&cfg.output_dir)?;
            freeflow::write_clusters(&clusters, &cfg.clusters_artifact())?;
            Ok(format!(
                "clustered {} day(s) into a ({}, {}, 4, {}, 2) tensor",
                days.len(),
                clusters.rows,
                clusters.cols,
                clusters.clusters_per_cell
            ))
        }
        Stage::Join => {
            require(&cfg.graph_artifact(), Stage::LoadGraph)?;
            let (grid, _) = cfg.build_grid()?;
            cfg.join.validate()?;
            let graph = roadgraph::read_resolved_graph(&cfg.graph_artifact())?;
            let map = sjoin::join_graph(&graph, &grid, &cfg.join);
            ensure_dir(&cfg.output_dir)?;
            sjoin::write_intersections_csv(&map, &cfg.join_artifact())?;
            let cells: usize = map.values().map(|v| v.len()).sum();
            Ok(format!(
                "joined {} edge(s) onto {} directed cell attributions",
                map.len(),
                cells
            ))
        }
        Stage::FreeFlow => {
            require(&cfg.graph_artifact(), Stage::LoadGraph)?;
            require(&cfg.join_artifact(), Stage::Join)?;
            require(&cfg.clusters_artifact(), Stage::Cluster)?;
            let graph = roadgraph::read_resolved_graph(&cfg.graph_artifact())?;
            let intersections = sjoin::read_intersections_csv(&cfg.join_artifact())?;
            let clusters = freeflow::read_clusters(&cfg.clusters_artifact())?;
            let mut rows = BTreeMap::new();
            for edge in &graph.edges {
                let cells = intersections
                    .get(&edge.key())
                    .map(|c| c.as_slice())
                    .unwrap_or(&[]);
                rows.insert(
                    edge.key(),
                    freeflow::free_flow_edge(cells, &clusters, edge.speed_kph),
                );
            }
            freeflow::write_freeflow_csv(&rows, &cfg.freeflow_artifact())?;
            Ok(format!("derived free-flow speeds for {} edge(s)", rows.len()))
        }
        Stage::Speeds => {
            require(&cfg.graph_artifact(), Stage::LoadGraph)?;
            require(&cfg.join_artifact(), Stage::Join)?;
            let agg_files = sorted_files(&cfg.agg_dir(), "agg")?;
            if agg_files.is_empty() {
                return Err(Error::MissingArtifact {
                    stage: Stage::Aggregate.dp_name(),
                    subcommand: Stage::Aggregate.subcommand(),
                    path: cfg.agg_dir(),
                });
            }
            let policy = cfg.filter.policy();
            let free_flow = if policy.is_some() {
                require(&cfg.freeflow_artifact(), Stage::FreeFlow)?;
                Some(freeflow::read_freeflow_csv(&cfg.freeflow_artifact())?)
            } else {
                None
            };
            let graph = roadgraph::read_resolved_graph(&cfg.graph_artifact())?;
            let intersections = sjoin::read_intersections_csv(&cfg.join_artifact())?;
            ensure_dir(&cfg.speeds_dir())?;
            let mut written = 0usize;
            let mut dropped = 0usize;
            for path in &agg_files {
                let (agg, _) = taggr::read_agg(path)?;
                let records = segspeed::day_segment_records(
                    &graph,
                    &agg,
                    &intersections,
                    free_flow.as_ref(),
                    policy.as_ref(),
                    cfg.normalize_freeflow,
                    cfg.median_rule,
                )?;
                // Rejected records are filtered out of the artifact, not
                // corrected or imputed.
                let total = records.len();
                let passing: Vec<SegmentRecord> =
                    records.into_iter().filter(|r| !r.filtered).collect();
                dropped += total - passing.len();
                written += passing.len();
                segspeed::write_segments_csv(
                    &passing,
                    &cfg.speeds_dir().join(format!("{}.csv", agg.day)),
                )?;
            }
            Ok(format!(
                "wrote {} segment record(s) over {} day(s), {} filtered out",
                written,
                agg_files.len(),
                dropped
            ))
        }
    }
}

/// Match two segment CSVs and write stats, report and histogram under
/// `output_dir/compare/`.
pub fn run_compare(
    cfg: &PipelineConfig,
    path_a: &Path,
    path_b: &Path,
    hour_mean: bool,
    group_by: GroupBy,
) -> Result<String> {
    require(&cfg.graph_artifact(), Stage::LoadGraph)?;
    require(&cfg.join_artifact(), Stage::Join)?;
    let graph = roadgraph::read_resolved_graph(&cfg.graph_artifact())?;
    let intersections = sjoin::read_intersections_csv(&cfg.join_artifact())?;
    let meta = compare::segment_meta(&graph, &intersections);
    let records_a = segspeed::read_segments_csv(path_a)?;
    let records_b = segspeed::read_segments_csv(path_b)?;
    let pairs = compare::match_records(
        &records_a,
        &records_b,
        hour_mean,
        cfg.bins_per_hour(),
        &meta,
    );
    let rows = compare::diff_stats(&pairs, group_by);
    let dir = cfg.output_dir.join("compare");
    ensure_dir(&dir)?;
    compare::write_stats_csv(&rows, &dir.join("stats.csv"))?;
    compare::write_histogram_csv(&pairs, 10, &dir.join("histogram.csv"))?;
    compare::write_report(&pairs, &rows, group_by, &dir.join("report.txt"))?;
    Ok(format!(
        "matched {} pair(s); wrote stats under {}",
        pairs.len(),
        dir.display()
    ))
}

/// One verification line of the demo report.
#[derive(Debug, Clone)]
pub struct DemoCheck {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct DemoReport {
    pub checks: Vec<DemoCheck>,
    pub stage_lines: Vec<String>,
}

impl DemoReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.stage_lines {
            let _ = writeln!(out, "{line}");
        }
        for c in &self.checks {
            let _ = writeln!(
                out,
                "check {:<24} {} ({})",
                c.name,
                if c.pass { "PASS" } else { "FAIL" },
                c.detail
            );
        }
        out
    }
}

const DEMO_COVERAGE_DAY: &str = "2019-01-02";
const DEMO_HARMONIC_DAY: &str = "2019-01-03";
const DEMO_FLEET_SPEEDS: [(f64, u32); 4] = [(20.0, 2), (40.0, 1), (80.0, 1), (105.0, 1)];

fn demo_graph_input() -> serde_json::Value {
    serde_json::json!({
        "nodes": [
            {"id": 1, "lat": 48.0025, "lon": 11.0015},
            {"id": 2, "lat": 48.0025, "lon": 11.0085},
            {"id": 3, "lat": 48.0085, "lon": 11.0015},
            {"id": 4, "lat": 48.0015, "lon": 11.0085},
            {"id": 5, "lat": 48.00725, "lon": 11.00225},
            {"id": 6, "lat": 48.00775, "lon": 11.00275},
            {"id": 7, "lat": 48.00725, "lon": 11.00625},
            {"id": 8, "lat": 48.00775, "lon": 11.00675}
        ],
        "edges": [
            {"u": 1, "v": 2, "highway": "primary", "maxspeed": [50.0],
             "geometry": [[48.0025, 11.0015], [48.0025, 11.0085]]},
            {"u": 3, "v": 4, "highway": "secondary", "maxspeed": [50.0],
             "geometry": [[48.0085, 11.0015], [48.0015, 11.0085]]},
            {"u": 5, "v": 6, "highway": "residential",
             "geometry": [[48.00725, 11.00225], [48.00775, 11.00275]]},
            {"u": 7, "v": 8, "highway": "residential",
             "geometry": [[48.00725, 11.00625], [48.00775, 11.00675]]}
        ]
    })
}

struct DemoKeys {
    axis: EdgeKey,
    diag: EdgeKey,
    harmonic: EdgeKey,
    equal_counts: EdgeKey,
}

fn demo_keys(graph: &RoadGraph) -> DemoKeys {
    let key_of = |u: u64, v: u64| {
        let edge = graph.edges.iter().find(|e| e.u == u && e.v == v).unwrap();
        EdgeKey { u, v, gkey: edge.gkey }
    };
    DemoKeys {
        axis: key_of(1, 2),
        diag: key_of(3, 4),
        harmonic: key_of(5, 6),
        equal_counts: key_of(7, 8),
    }
}

fn demo_scenarios(keys: &DemoKeys) -> (Scenario, Scenario) {
    // Sparse uniform traffic, one probe per traversal, with angular noise
    // wide enough that diagonal-edge probes sometimes leave their only
    // readable quadrant while axis-edge probes always stay readable.
    let uniform = |route: EdgeKey| FleetSpec {
        classes: vec![VehicleClass { speed_kph: 30.0, count: 48 }],
        probe_constant: 30.0,
        route,
        window: (0.0, 86_400.0),
        angle_jitter_deg: 60.0,
        equal_counts: None,
    };
    let coverage = Scenario {
        day: DEMO_COVERAGE_DAY.parse().unwrap(),
        fleets: vec![uniform(keys.axis), uniform(keys.diag)],
    };
    let classes: Vec<VehicleClass> = DEMO_FLEET_SPEEDS
        .iter()
        .map(|&(speed_kph, count)| VehicleClass { speed_kph, count })
        .collect();
    let harmonic = Scenario {
        day: DEMO_HARMONIC_DAY.parse().unwrap(),
        fleets: vec![
            FleetSpec {
                classes: classes.clone(),
                probe_constant: 20_000.0,
                route: keys.harmonic,
                window: (30.0, 270.0),
                angle_jitter_deg: 0.0,
                equal_counts: None,
            },
            FleetSpec {
                classes,
                probe_constant: 20_000.0,
                route: keys.equal_counts,
                window: (30.0, 270.0),
                angle_jitter_deg: 0.0,
                equal_counts: Some(100),
            },
        ],
    };
    (coverage, harmonic)
}

fn demo_fleet_speed_multiset() -> Vec<f64> {
    DEMO_FLEET_SPEEDS
        .iter()
        .flat_map(|&(speed, count)| std::iter::repeat(speed).take(count as usize))
        .collect()
}

/// Build the bundled synthetic city under `dir` and return its pipeline
/// config (written to `dir/config.json` with relative paths, so two demo
/// trees are byte-identical).
pub fn build_demo_city(dir: &Path, seed: u64) -> Result<PipelineConfig> {
    ensure_dir(dir)?;
    let graph_input = dir.join("graph.input.json");
    let mut graph_bytes = serde_json::to_vec_pretty(&demo_graph_input())
        .map_err(|e| Error::json(&graph_input, e))?;
    graph_bytes.push(b'\n');
    atomic_write(&graph_input, &graph_bytes)?;

    let cfg = PipelineConfig {
        city: "demo-city".into(),
        grid: GridConfigFile {
            lat_min: 48.0,
            lat_max: 48.01,
            lon_min: 11.0,
            lon_max: 11.01,
            cell_size: 0.001,
            bins_per_day: 288,
            privacy_threshold: 0,
            volume_cutoff: 255,
            volume_scale_divisor: None,
        },
        join: JoinParams::default(),
        filter: FilterMode::Paired,
        normalize_freeflow: false,
        maxspeed_policy: MaxspeedPolicy::Mean,
        median_rule: MedianRule::Lower,
        seed,
        agg_factor: 3,
        graph_file: "graph.input.json".into(),
        probe_dir: "probes".into(),
        output_dir: "out".into(),
    };
    cfg.save(&dir.join("config.json"))?;

    let graph = roadgraph::load_graph(&graph_input, &cfg.graph_options())?;
    let keys = demo_keys(&graph);
    let (coverage, harmonic) = demo_scenarios(&keys);
    coverage.save(&dir.join(format!("scenario_{DEMO_COVERAGE_DAY}.json")))?;
    harmonic.save(&dir.join(format!("scenario_{DEMO_HARMONIC_DAY}.json")))?;

    PipelineConfig::load(&dir.join("config.json"))
}

/// Generate the synthetic city, run the full pipeline and the oracle
/// checks, and return the printed report.
pub fn run_demo(dir: &Path, seed: u64) -> Result<DemoReport> {
    let cfg = build_demo_city(dir, seed)?;
    let mut stage_lines = Vec::new();

    for scenario in [
        dir.join(format!("scenario_{DEMO_COVERAGE_DAY}.json")),
        dir.join(format!("scenario_{DEMO_HARMONIC_DAY}.json")),
    ] {
        stage_lines.push(format!("simulate: {}", run_simulate(&cfg, &scenario)?));
    }
    stage_lines.push(format!("bin: {}", run_bin(&cfg)?));
    for stage in [
        Stage::LoadGraph,
        Stage::Aggregate,
        Stage::Join,
        Stage::Cluster,
        Stage::FreeFlow,
        Stage::Speeds,
    ] {
        stage_lines.push(format!("{}: {}", stage.dp_name(), run_stage(stage, &cfg)?));
    }

    let (grid, enc) = cfg.build_grid()?;
    let mut checks = Vec::new();

    // Spot-binning equivalence against the brute-force path, per day.
    let mut equivalent = true;
    let mut probes_checked = 0usize;
    for day in [DEMO_COVERAGE_DAY, DEMO_HARMONIC_DAY] {
        let probes = spotbin::read_probes_csv(&cfg.probe_dir.join(format!("{day}.csv")))?;
        let (movie, _) = spotbin::read_movie(&cfg.movies_dir().join(format!("{day}.movie")))?;
        let brute = fcdsim::brute_force_movie(&probes, day.parse().unwrap(), &grid, &enc);
        equivalent &= movie.data == brute.data;
        probes_checked += probes.len();
    }
    checks.push(DemoCheck {
        name: "spotbin-oracle",
        pass: equivalent,
        detail: format!("{probes_checked} probes re-binned exactly"),
    });

    // Harmonic-mean property at the isolated single-cell edge.
    let (agg, _) = taggr::read_agg(&cfg.agg_dir().join(format!("{DEMO_HARMONIC_DAY}.agg")))?;
    let speeds = demo_fleet_speed_multiset();
    let harmonic = fcdsim::harmonic_mean(&speeds)?;
    let tolerance = 2.0 * (120.0 / 255.0) + 1.0;
    let binned = agg.speed(0, 2, 2, Heading::NE);
    let harmonic_err = binned.map(|b| (b - harmonic).abs());
    checks.push(DemoCheck {
        name: "harmonic-mean",
        pass: harmonic_err.map(|e| e <= tolerance).unwrap_or(false),
        detail: match (binned, harmonic_err) {
            (Some(b), Some(e)) => format!(
                "binned {b:.3} kph vs harmonic {harmonic:.3} kph, error {e:.3} <= {tolerance:.3}"
            ),
            _ => "no binned speed at the fleet cell".into(),
        },
    });

    // Equal probe counts approximate the arithmetic mean instead.
    let arithmetic = speeds.iter().sum::<f64>() / speeds.len() as f64;
    let binned_eq = agg.speed(0, 2, 6, Heading::NE);
    let eq_pass = binned_eq
        .map(|b| (b - arithmetic).abs() <= tolerance && b > harmonic)
        .unwrap_or(false);
    checks.push(DemoCheck {
        name: "arithmetic-vs-harmonic",
        pass: eq_pass,
        detail: match binned_eq {
            Some(b) => format!(
                "equal-count binned {b:.3} kph vs arithmetic {arithmetic:.3} kph, above harmonic {harmonic:.3}"
            ),
            None => "no binned speed at the equal-count cell".into(),
        },
    });

    // Coverage asymmetry between axis-aligned and diagonal edges.
    let graph = roadgraph::read_resolved_graph(&cfg.graph_artifact())?;
    let records = segspeed::read_segments_csv(
        &cfg.speeds_dir().join(format!("{DEMO_COVERAGE_DAY}.csv")),
    )?;
    let bins = grid.bins_per_day / cfg.agg_factor;
    let (coverage_axis, coverage_diag) =
        fcdsim::coverage_by_orientation(&records, &graph, bins, 10.0);
    checks.push(DemoCheck {
        name: "coverage-asymmetry",
        pass: coverage_axis >= coverage_diag && coverage_axis > 0.0,
        detail: format!("axis {coverage_axis:.4} >= diagonal {coverage_diag:.4}"),
    });

    // Self-join sanity of the comparison toolkit.
    let intersections = sjoin::read_intersections_csv(&cfg.join_artifact())?;
    let meta = compare::segment_meta(&graph, &intersections);
    let pairs = compare::match_records(&records, &records, false, cfg.bins_per_hour(), &meta);
    let stats = compare::diff_stats(&pairs, GroupBy::Highway);
    let zero_diffs = stats
        .iter()
        .all(|r| r.mean == 0.0 && r.std == 0.0 && r.median == 0.0);
    let max_ape = pairs
        .iter()
        .map(|p| compare::ape(p.speed_a, p.speed_b).unwrap_or(f64::INFINITY))
        .fold(0.0f64, f64::max);
    checks.push(DemoCheck {
        name: "compare-self-join",
        pass: !pairs.is_empty() && zero_diffs && max_ape == 0.0,
        detail: format!("{} pairs, all diffs zero, max APE {max_ape}", pairs.len()),
    });

    let report = DemoReport {
        checks,
        stage_lines,
    };
    atomic_write(&cfg.output_dir.join("demo_report.txt"), report.render().as_bytes())?;
    Ok(report)
}
