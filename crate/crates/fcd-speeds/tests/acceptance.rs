//! Acceptance suite: one test per pipeline-level criterion, each printing
//! a pass/fail line (run with `--nocapture` to see them all).

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fcd_speeds::compare;
use fcd_speeds::fcdsim::{
    self, brute_force_movie, coverage_by_orientation, harmonic_mean, EdgeKey, FleetSpec,
    VehicleClass,
};
use fcd_speeds::freeflow::{self, cluster_movies, free_flow_edge, CellClusters};
use fcd_speeds::grid::{
    decode_speed, encode_speed, EncodingParams, GridConfig, Heading, SPEED_CAP_KPH,
};
use fcd_speeds::pipeline;
use fcd_speeds::roadgraph::{gkey, polyline_length_m, Edge, RoadGraph};
use fcd_speeds::segspeed::{
    confidence_filter, segment_speed, FilterPolicy, MedianRule, SegmentRecord,
};
use fcd_speeds::sjoin::{headings_for, intersecting_cells, CellFraction, JoinParams};
use fcd_speeds::spotbin::{bin_probes, Probe};
use fcd_speeds::taggr::{aggregate, AggMovieDay};

fn report(number: u8, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {number:02} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {number:02} {name} failed: {detail}");
}

fn day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2019, 1, 2).unwrap()
}

fn random_grid(rng: &mut ChaCha8Rng) -> GridConfig {
    let rows = rng.gen_range(5..=20);
    let cols = rng.gen_range(5..=20);
    let bins = *[24usize, 48, 96, 288].iter().nth(rng.gen_range(0..4)).unwrap();
    GridConfig::new(
        48.0,
        48.0 + rows as f64 * 0.001,
        11.0,
        11.0 + cols as f64 * 0.001,
        0.001,
        bins,
    )
    .unwrap()
}

// 1. Spot-binning equals the brute-force oracle exactly on randomized
//    scenarios, fast.
#[test]
fn criterion_01_spotbin_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut mismatches = 0usize;
    for _ in 0..100 {
        let cfg = random_grid(&mut rng);
        let enc = EncodingParams {
            privacy_threshold: rng.gen_range(0..3),
            volume_cutoff: rng.gen_range(10..=255),
            volume_scale_divisor: rng.gen_range(10..=255),
        };
        let n = rng.gen_range(1..=10_000);
        let probes: Vec<Probe> = (0..n)
            .map(|_| Probe {
                t: rng.gen_range(-100.0..87_000.0),
                lat: rng.gen_range(cfg.lat_min - 0.002..cfg.lat_max + 0.002),
                lon: rng.gen_range(cfg.lon_min - 0.002..cfg.lon_max + 0.002),
                angle: rng.gen_range(0.0..360.0),
                speed: rng.gen_range(0.0..160.0),
            })
            .collect();
        let (movie, _) = bin_probes(&probes, day(), &cfg, &enc);
        let brute = brute_force_movie(&probes, day(), &cfg, &enc);
        if movie.data != brute.data {
            mismatches += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    report(
        1,
        "spot-binning oracle equivalence",
        mismatches == 0 && elapsed < 10.0,
        &format!("100 scenarios, {mismatches} mismatches, {elapsed:.2}s"),
    );
}

fn one_cell_graph() -> (RoadGraph, EdgeKey) {
    // An edge fully inside cell (2, 2) of the 10x10 grid, bearing 45.
    let geometry = vec![(48.00725, 11.00225), (48.00775, 11.00275)];
    let key = gkey(&geometry);
    let mut nodes = BTreeMap::new();
    nodes.insert(1, geometry[0]);
    nodes.insert(2, geometry[1]);
    let graph = RoadGraph {
        nodes,
        edges: vec![Edge {
            u: 1,
            v: 2,
            gkey: key,
            highway: "residential".into(),
            speed_kph: 30.0,
            length_m: polyline_length_m(&geometry),
            geometry,
        }],
    };
    (graph, EdgeKey { u: 1, v: 2, gkey: key })
}

fn grid_10x10() -> GridConfig {
    GridConfig::new(48.0, 48.01, 11.0, 11.01, 0.001, 288).unwrap()
}

// 2. End-to-end binned speeds approximate the harmonic mean under the
//    inverse-speed probe rate, and the arithmetic mean under equal rates.
#[test]
fn criterion_02_harmonic_mean_property() {
    let cfg = grid_10x10();
    let (graph, route) = one_cell_graph();
    let tolerance = 2.0 * (SPEED_CAP_KPH / 255.0) + 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_harmonic = 0.0f64;
    let mut worst_arithmetic = 0.0f64;

    for fleet_index in 0..20 {
        // Speeds in [10, 110] with enforced spread so the arithmetic and
        // harmonic means are well separated.
        let mut classes;
        loop {
            let n = rng.gen_range(2..=6);
            classes = (0..n)
                .map(|_| VehicleClass {
                    speed_kph: rng.gen_range(10.0..=110.0),
                    count: rng.gen_range(1..=3),
                })
                .collect::<Vec<_>>();
            let speeds: Vec<f64> = classes.iter().map(|c| c.speed_kph).collect();
            let spread = speeds.iter().copied().fold(f64::MIN, f64::max)
                - speeds.iter().copied().fold(f64::MAX, f64::min);
            if spread >= 30.0 {
                break;
            }
        }
        let multiset: Vec<f64> = classes
            .iter()
            .flat_map(|c| std::iter::repeat(c.speed_kph).take(c.count as usize))
            .collect();
        let harmonic = harmonic_mean(&multiset).unwrap();
        let arithmetic = multiset.iter().sum::<f64>() / multiset.len() as f64;
        assert!(
            arithmetic - harmonic > 1.0,
            "fleet {fleet_index}: means too close for a strict comparison"
        );

        let run = |equal_counts: Option<u32>| -> f64 {
            let spec = FleetSpec {
                classes: classes.clone(),
                probe_constant: 20_000.0,
                route,
                window: (30.0, 270.0),
                angle_jitter_deg: 0.0,
                equal_counts,
            };
            let probes =
                fcdsim::simulate_probes(&spec, &graph, &cfg, 1000 + fleet_index).unwrap();
            let (movie, report) = bin_probes(&probes, day(), &cfg, &EncodingParams::default());
            assert_eq!(report.binned as usize, probes.len());
            let agg = aggregate(&movie, 3).unwrap();
            agg.speed(0, 2, 2, Heading::NE).expect("fleet cell has data")
        };

        let binned = run(None);
        worst_harmonic = worst_harmonic.max((binned - harmonic).abs());
        assert!(
            (binned - harmonic).abs() <= tolerance,
            "fleet {fleet_index}: binned {binned} vs harmonic {harmonic}"
        );

        let binned_eq = run(Some(50));
        worst_arithmetic = worst_arithmetic.max((binned_eq - arithmetic).abs());
        assert!(
            (binned_eq - arithmetic).abs() <= tolerance,
            "fleet {fleet_index}: equal-count binned {binned_eq} vs arithmetic {arithmetic}"
        );
        assert!(
            binned_eq > harmonic,
            "fleet {fleet_index}: equal-count binned {binned_eq} not above harmonic {harmonic}"
        );
    }
    report(
        2,
        "harmonic-mean property",
        true,
        &format!(
            "20 fleets, max |binned - harmonic| {worst_harmonic:.3}, \
             max |equal-count - arithmetic| {worst_arithmetic:.3}, tolerance {tolerance:.3}"
        ),
    );
}

// --- Independent geometry for the spatial-join oracle ---------------------

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn on_segment(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

fn segments_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Does the segment touch the cell rectangle inflated by `margin`?
/// Endpoint-inside plus boundary-crossing tests; an implementation
/// independent of the library's parameter clipping.
fn oracle_segment_touches(
    p: (f64, f64),
    q: (f64, f64),
    rect: (f64, f64, f64, f64),
    margin: f64,
) -> bool {
    let (lat_lo, lat_hi, lon_lo, lon_hi) = rect;
    let (lo0, hi0) = (lat_lo - margin, lat_hi + margin);
    let (lo1, hi1) = (lon_lo - margin, lon_hi + margin);
    let inside =
        |pt: (f64, f64)| pt.0 >= lo0 && pt.0 <= hi0 && pt.1 >= lo1 && pt.1 <= hi1;
    if inside(p) || inside(q) {
        return true;
    }
    let corners = [(lo0, lo1), (lo0, hi1), (hi0, hi1), (hi0, lo1)];
    (0..4).any(|i| segments_intersect(p, q, corners[i], corners[(i + 1) % 4]))
}

fn cheb_dist_to_rect(lat: f64, lon: f64, rect: (f64, f64, f64, f64)) -> f64 {
    let (lat_lo, lat_hi, lon_lo, lon_hi) = rect;
    let dlat = (lat_lo - lat).max(lat - lat_hi).max(0.0);
    let dlon = (lon_lo - lon).max(lon - lon_hi).max(0.0);
    dlat.max(dlon)
}

// Oracle interpolation, written independently of the library.
fn oracle_samples(geometry: &[(f64, f64)], step: f64) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for w in geometry.windows(2) {
        let (p, q) = (w[0], w[1]);
        let len = ((q.0 - p.0).powi(2) + (q.1 - p.1).powi(2)).sqrt();
        if len == 0.0 {
            continue;
        }
        let bearing = {
            let b = (q.1 - p.1).atan2(q.0 - p.0).to_degrees();
            if b < 0.0 {
                b + 360.0
            } else {
                b
            }
        };
        let n = ((len / step - 1e-9).ceil() as usize).max(1);
        for i in 0..=n {
            let f = i as f64 / n as f64;
            out.push((p.0 + (q.0 - p.0) * f, p.1 + (q.1 - p.1) * f, bearing));
        }
    }
    out
}

// 3. The joined cell set equals a dense rasterization oracle, and every
//    heading tag obeys headings_for.
#[test]
fn criterion_03_spatial_join_oracle() {
    let cfg = GridConfig::new(48.0, 48.02, 11.0, 11.02, 0.001, 288).unwrap();
    let jp = JoinParams {
        step: cfg.cell_size / 4.0,
        pos_margin: 0.0005,
        ang_margin: 10.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut checked_cells = 0usize;
    let mut sliver_confirmed = 0usize;

    for edge_index in 0..200 {
        // Random polyline of 1-3 legs, a few cells long, sometimes poking
        // out of the box.
        let start = (
            rng.gen_range(cfg.lat_min - 0.002..cfg.lat_max + 0.002),
            rng.gen_range(cfg.lon_min - 0.002..cfg.lon_max + 0.002),
        );
        let mut geometry = vec![start];
        for _ in 0..rng.gen_range(1..=3) {
            let prev = *geometry.last().unwrap();
            geometry.push((
                prev.0 + rng.gen_range(-0.003..0.003),
                prev.1 + rng.gen_range(-0.003..0.003),
            ));
        }
        if polyline_length_m(&geometry) == 0.0 {
            continue;
        }
        let edge = Edge {
            u: 1,
            v: 2,
            gkey: gkey(&geometry),
            highway: "primary".into(),
            speed_kph: 50.0,
            length_m: polyline_length_m(&geometry),
            geometry: geometry.clone(),
        };

        let cells = intersecting_cells(&edge, &cfg, &jp);
        let implementation: BTreeSet<(usize, usize, Heading)> =
            cells.iter().map(|c| (c.row, c.col, c.heading)).collect();

        // Dense oracle: sample at step/10, scan every grid cell.
        let mut oracle: BTreeSet<(usize, usize, Heading)> = BTreeSet::new();
        for (lat, lon, bearing) in oracle_samples(&geometry, jp.step / 10.0) {
            let headings = headings_for(bearing, jp.ang_margin);
            for row in 0..cfg.rows {
                for col in 0..cfg.cols {
                    if cheb_dist_to_rect(lat, lon, cfg.cell_rect(row, col)) <= jp.pos_margin {
                        for &h in &headings {
                            oracle.insert((row, col, h));
                        }
                    }
                }
            }
        }

        // The dense point oracle can never see cells the implementation
        // missed.
        let oracle_extra: Vec<_> = oracle.difference(&implementation).collect();
        assert!(
            oracle_extra.is_empty(),
            "edge {edge_index}: oracle found cells the join missed: {oracle_extra:?}"
        );

        // Cells the implementation holds beyond the dense samples must be
        // genuine margin contacts of the continuous polyline, confirmed by
        // an independently formulated segment/rectangle predicate.
        for &(row, col, heading) in implementation.difference(&oracle) {
            let rect = cfg.cell_rect(row, col);
            let touched = geometry.windows(2).any(|w| {
                oracle_segment_touches(w[0], w[1], rect, jp.pos_margin)
                    && headings_for(
                        {
                            let b = (w[1].1 - w[0].1).atan2(w[1].0 - w[0].0).to_degrees();
                            if b < 0.0 {
                                b + 360.0
                            } else {
                                b
                            }
                        },
                        jp.ang_margin,
                    )
                    .contains(&heading)
            });
            assert!(
                touched,
                "edge {edge_index}: cell ({row},{col},{heading}) not confirmed by the \
                 geometric oracle"
            );
            sliver_confirmed += 1;
        }

        // Heading sets: every sample bearing attributes exactly the
        // headings_for set to its containing cell.
        for (lat, lon, bearing) in oracle_samples(&geometry, jp.step) {
            if let Some((row, col)) = cfg.cell_of(lat, lon) {
                for h in headings_for(bearing, jp.ang_margin) {
                    assert!(
                        implementation.contains(&(row, col, h)),
                        "edge {edge_index}: sample at ({lat},{lon}) bearing {bearing} \
                         missing heading {h}"
                    );
                }
            }
        }
        checked_cells += implementation.len();
    }
    report(
        3,
        "spatial-join oracle",
        true,
        &format!(
            "200 edges, {checked_cells} directed cells, dense oracle subset exact, \
             {sliver_confirmed} between-sample contacts confirmed geometrically"
        ),
    );
}

fn matched_orientation_city() -> (RoadGraph, GridConfig) {
    let cfg = grid_10x10();
    let axis = vec![(48.0025, 11.0015), (48.0025, 11.0085)];
    let diag = vec![(48.0085, 11.0015), (48.0015, 11.0085)];
    let mut nodes = BTreeMap::new();
    nodes.insert(1, axis[0]);
    nodes.insert(2, axis[1]);
    nodes.insert(3, diag[0]);
    nodes.insert(4, diag[1]);
    let graph = RoadGraph {
        nodes,
        edges: vec![
            Edge {
                u: 1,
                v: 2,
                gkey: gkey(&axis),
                highway: "primary".into(),
                speed_kph: 50.0,
                length_m: polyline_length_m(&axis),
                geometry: axis,
            },
            Edge {
                u: 3,
                v: 4,
                gkey: gkey(&diag),
                highway: "primary".into(),
                speed_kph: 50.0,
                length_m: polyline_length_m(&diag),
                geometry: diag,
            },
        ],
    };
    (graph, cfg)
}

fn uniform_traffic_records(graph: &RoadGraph, cfg: &GridConfig) -> (Vec<SegmentRecord>, usize) {
    let uniform = |edge: &Edge| FleetSpec {
        classes: vec![VehicleClass { speed_kph: 30.0, count: 48 }],
        probe_constant: 30.0,
        route: EdgeKey { u: edge.u, v: edge.v, gkey: edge.gkey },
        window: (0.0, 86_400.0),
        angle_jitter_deg: 60.0,
        equal_counts: None,
    };
    let mut probes = Vec::new();
    for edge in &graph.edges {
        probes.extend(fcdsim::simulate_probes(&uniform(edge), graph, cfg, 404).unwrap());
    }
    let (movie, _) = bin_probes(&probes, day(), cfg, &EncodingParams::default());
    let agg = aggregate(&movie, 3).unwrap();
    let intersections = fcd_speeds::sjoin::join_graph(graph, cfg, &JoinParams::default());
    let records = fcd_speeds::segspeed::day_segment_records(
        graph,
        &agg,
        &intersections,
        None,
        None,
        false,
        MedianRule::Lower,
    )
    .unwrap();
    (records, agg.bins)
}

// 4. Matched axis/diagonal edges under uniform traffic: axis coverage is
//    never below diagonal coverage.
#[test]
fn criterion_04_coverage_asymmetry() {
    let (graph, cfg) = matched_orientation_city();
    let (records, bins) = uniform_traffic_records(&graph, &cfg);
    let (coverage_axis, coverage_diag) = coverage_by_orientation(&records, &graph, bins, 10.0);
    report(
        4,
        "coverage asymmetry",
        coverage_axis >= coverage_diag && coverage_axis > 0.0,
        &format!("axis {coverage_axis:.4} >= diagonal {coverage_diag:.4}"),
    );
}

// 5. Free-flow pipeline on bimodal synthetic speeds: quantile lands at the
//    free mode, empty edges default, clipping respects the limit, and the
//    cluster tensor is bit-identical across reruns.
#[test]
fn criterion_05_free_flow_pipeline() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (rows, cols, bins) = (6usize, 6usize, 96usize);
    // Bimodal per-cell speeds: 70% congested around 20, 30% free around 80.
    let mut days = Vec::new();
    for _ in 0..2 {
        let slots = bins * rows * cols * 4;
        let mut volumes = vec![0u32; slots];
        let mut speeds = vec![f32::NAN; slots];
        for bin in 0..bins {
            for (row, col) in [(1usize, 1usize), (1, 2), (2, 1), (2, 2)] {
                let slot = ((bin * rows + row) * cols + col) * 4 + Heading::NE.index();
                let free = bin % 10 < 3; // exactly 30% free mass
                let speed = if free {
                    80.0 + rng.gen_range(-0.5..0.5)
                } else {
                    20.0 + rng.gen_range(-0.5..0.5)
                };
                volumes[slot] = 5;
                speeds[slot] = speed as f32;
            }
        }
        days.push(AggMovieDay {
            day: day(),
            rows,
            cols,
            bins,
            agg_factor: 3,
            volumes,
            speeds,
        });
    }

    let clusters = cluster_movies(&days, 5, 999).unwrap();
    let cells: Vec<CellFraction> = [(1usize, 1usize), (1, 2), (2, 1), (2, 2)]
        .iter()
        .map(|&(row, col)| CellFraction {
            row,
            col,
            heading: Heading::NE,
            fraction: 0.25,
        })
        .collect();

    let unclipped = free_flow_edge(&cells, &clusters, 120.0);
    let clipped = free_flow_edge(&cells, &clusters, 60.0);
    let empty_cells = vec![CellFraction {
        row: 4,
        col: 4,
        heading: Heading::SW,
        fraction: 1.0,
    }];
    let empty = free_flow_edge(&empty_cells, &clusters, 50.0);

    // Bit-identical tensors across two runs.
    let rerun = cluster_movies(&days, 5, 999).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (path_a, path_b) = (dir.path().join("a.tensor"), dir.path().join("b.tensor"));
    freeflow::write_clusters(&clusters, &path_a).unwrap();
    freeflow::write_clusters(&rerun, &path_b).unwrap();
    let identical = std::fs::read(&path_a).unwrap() == std::fs::read(&path_b).unwrap();

    let pass = (unclipped - 80.0).abs() <= 2.0 && clipped <= 60.0 && empty == 20.0 && identical;
    report(
        5,
        "free-flow pipeline",
        pass,
        &format!(
            "free flow {unclipped:.2} kph (target 80 +- 2), clipped {clipped:.2} <= 60, \
             empty-data edge {empty} == 20, rerun bit-identical: {identical}"
        ),
    );
}

// 6. Confidence filter truth table and monotonicity sweep.
#[test]
fn criterion_06_confidence_filter() {
    let paired = FilterPolicy::default();
    let verbatim = FilterPolicy::verbatim();
    let record = |volume: u32, median: f64| SegmentRecord {
        day: day(),
        t: 0,
        u: 1,
        v: 2,
        gkey: 3,
        volume,
        median_speed_kph: median,
        mean_speed_kph: median,
        std_speed_kph: 0.0,
        filtered: false,
    };
    let ff = 50.0;

    // The three discriminating examples.
    let cases = [
        (record(4, 10.0), true, true),   // cf 0.2, vol 4
        (record(10, 40.0), false, false), // cf 0.8, vol 10
        (record(2, 45.0), false, true),  // cf 0.9, vol 2
    ];
    let mut truth_ok = true;
    for (rec, expect_paired, expect_verbatim) in &cases {
        truth_ok &=
            confidence_filter(rec, ff, &paired).unwrap().filtered == *expect_paired;
        truth_ok &=
            confidence_filter(rec, ff, &verbatim).unwrap().filtered == *expect_verbatim;
    }

    // Paired-policy monotonicity over the full grid sweep.
    let ff_sweep = 100.0;
    let mut monotone = true;
    let rejected = |vol: u32, cf_step: usize| -> bool {
        let rec = record(vol, cf_step as f64 * 0.1 * ff_sweep);
        confidence_filter(&rec, ff_sweep, &paired).unwrap().filtered
    };
    for vol in 0..=10u32 {
        for cf_step in 0..=12usize {
            if !rejected(vol, cf_step) {
                if vol < 10 {
                    monotone &= !rejected(vol + 1, cf_step);
                }
                if cf_step < 12 {
                    monotone &= !rejected(vol, cf_step + 1);
                }
            }
            if vol >= 5 {
                monotone &= !rejected(vol, cf_step);
            }
        }
    }
    report(
        6,
        "confidence filter truth table",
        truth_ok && monotone,
        "3 discriminating cases under both policies, monotone over 11x13 sweep",
    );
}

// 7. Temporal aggregation: exact volume sums, zero-volume invalidation,
//    factor-1 identity.
#[test]
fn criterion_07_temporal_aggregation() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let cfg = GridConfig::new(48.0, 48.004, 11.0, 11.004, 0.001, 24).unwrap();
    let mut checked = 0usize;
    for _ in 0..25 {
        let mut movie = fcd_speeds::spotbin::MovieDay::zeros(day(), &cfg);
        for bin in 0..movie.bins {
            for row in 0..movie.rows {
                for col in 0..movie.cols {
                    for h in Heading::ALL {
                        let vol: u8 = if rng.gen_bool(0.4) { rng.gen_range(1..=255) } else { 0 };
                        let speed: u8 = if vol > 0 { rng.gen_range(1..=255) } else { 0 };
                        movie.set(bin, row, col, 2 * h.index(), vol);
                        movie.set(bin, row, col, 2 * h.index() + 1, speed);
                    }
                }
            }
        }
        for factor in [1usize, 2, 3, 4] {
            let agg = aggregate(&movie, factor).unwrap();
            for bin_out in 0..agg.bins {
                for row in 0..agg.rows {
                    for col in 0..agg.cols {
                        for h in Heading::ALL {
                            // Independent scalar re-evaluation.
                            let mut vol_sum = 0u32;
                            let mut speed_sum = 0.0f64;
                            let mut n = 0u32;
                            for k in 0..factor {
                                let vol = movie.volume_code(bin_out * factor + k, row, col, h);
                                vol_sum += vol as u32;
                                if vol > 0 {
                                    speed_sum += decode_speed(movie.speed_code(
                                        bin_out * factor + k,
                                        row,
                                        col,
                                        h,
                                    ));
                                    n += 1;
                                }
                            }
                            assert_eq!(agg.volume(bin_out, row, col, h), vol_sum);
                            match agg.speed(bin_out, row, col, h) {
                                None => assert_eq!(n, 0, "zero-volume invalidation"),
                                Some(s) => {
                                    assert!(n > 0);
                                    assert!((s - speed_sum / n as f64).abs() < 1e-4);
                                }
                            }
                            checked += 1;
                        }
                    }
                }
            }
        }
    }
    report(
        7,
        "temporal aggregation",
        true,
        &format!("{checked} aggregated slots match the scalar re-evaluation"),
    );
}

// 8. Encoding round trip over a fine scan.
#[test]
fn criterion_08_encoding_round_trip() {
    let mut max_err = 0.0f64;
    let mut v = 0.0f64;
    while v <= 200.0 {
        let clipped = v.clamp(0.0, SPEED_CAP_KPH);
        max_err = max_err.max((decode_speed(encode_speed(v)) - clipped).abs());
        v += 0.01;
    }
    let bound = SPEED_CAP_KPH / 255.0;
    report(
        8,
        "encoding round trip",
        max_err <= bound + 1e-12,
        &format!("max |decode(encode(v)) - clip(v)| = {max_err:.6} <= {bound:.6}"),
    );
}

// 9. Self-join of a segment CSV: zero diffs, zero APEs, partitioned counts.
#[test]
fn criterion_09_compare_self_join() {
    let (graph, cfg) = matched_orientation_city();
    let (records, _) = uniform_traffic_records(&graph, &cfg);
    assert!(!records.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("segments.csv");
    fcd_speeds::segspeed::write_segments_csv(&records, &path).unwrap();
    let reread = fcd_speeds::segspeed::read_segments_csv(&path).unwrap();

    let intersections = fcd_speeds::sjoin::join_graph(&graph, &cfg, &JoinParams::default());
    let meta = compare::segment_meta(&graph, &intersections);
    let pairs = compare::match_records(&reread, &reread, false, 4, &meta);
    assert_eq!(pairs.len(), reread.len());

    let mut zero = true;
    for group_by in [
        compare::GroupBy::Highway,
        compare::GroupBy::Length,
        compare::GroupBy::Complexity,
    ] {
        let rows = compare::diff_stats(&pairs, group_by);
        let total = rows.last().unwrap();
        zero &= rows.iter().all(|r| r.mean == 0.0 && r.std == 0.0 && r.median == 0.0);
        let group_sum: usize = rows[..rows.len() - 1].iter().map(|r| r.count).sum();
        zero &= group_sum == pairs.len() && total.count == pairs.len();
    }
    let apes_zero = pairs
        .iter()
        .all(|p| compare::ape(p.speed_a, p.speed_b).unwrap() == 0.0);
    report(
        9,
        "compare self-join",
        zero && apes_zero,
        &format!("{} pairs, all diffs and APEs zero, group counts partition", pairs.len()),
    );
}

fn dir_snapshot(root: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

// 10. Two demo runs with the same seed produce byte-identical trees, fast.
#[test]
fn criterion_10_demo_determinism() {
    let started = Instant::now();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let report_a = pipeline::run_demo(dir_a.path(), 7).unwrap();
    let report_b = pipeline::run_demo(dir_b.path(), 7).unwrap();
    let elapsed = started.elapsed().as_secs_f64();

    let snap_a = dir_snapshot(dir_a.path());
    let snap_b = dir_snapshot(dir_b.path());
    let identical = snap_a == snap_b;
    let pass = report_a.all_pass() && report_b.all_pass() && identical && elapsed < 60.0;
    report(
        10,
        "demo determinism",
        pass,
        &format!(
            "{} files byte-identical across runs, all demo checks pass, {elapsed:.2}s for two runs",
            snap_a.len()
        ),
    );
}
