//! Free-flow estimation: per-cell 1-D k-means speed clusters, pooled
//! volume-weighted quantile selection per edge, and optional
//! normalization against the signalized speed limit.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{atomic_write, read_container, write_container};
use crate::error::{Error, Result};
use crate::grid::Heading;
use crate::sjoin::CellFraction;
use crate::taggr::AggMovieDay;

/// Number of clusters kept per directed cell.
pub const CLUSTERS_PER_CELL: usize = 5;

/// Default free-flow quantile over pooled cluster sizes.
pub const FREE_FLOW_QUANTILE: f64 = 0.8;

/// Fallback free-flow speed when an edge has no cluster data.
pub const FREE_FLOW_DEFAULT_KPH: f64 = 20.0;

/// Days sampled for clustering when more are available.
pub const CLUSTER_SAMPLE_DAYS: usize = 20;

/// One speed cluster: median of its members and member count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub center: f64,
    pub size: u32,
}

/// Dense (rows, cols, 4, k, 2) tensor of clusters per directed cell.
/// Cells without data hold zero-size placeholders.
#[derive(Debug, Clone, PartialEq)]
pub struct CellClusters {
    pub rows: usize,
    pub cols: usize,
    pub clusters_per_cell: usize,
    pub data: Vec<Cluster>,
}

impl CellClusters {
    pub fn get(&self, row: usize, col: usize, heading: Heading) -> &[Cluster] {
        let base = ((row * self.cols + col) * 4 + heading.index()) * self.clusters_per_cell;
        &self.data[base..base + self.clusters_per_cell]
    }
}

/// 1-D k-means over speed samples with deterministic farthest-point
/// seeding; the reported center of each cluster is the median of its
/// members. Zero-size placeholders pad the result to `k` clusters; empty
/// input yields an empty list.
pub fn cluster_cell(samples: &[f64], k: usize, seed: u64) -> Vec<Cluster> {
    if samples.is_empty() || k == 0 {
        return Vec::new();
    }
    let n = samples.len();

    // Farthest-point init, first center drawn from the seeded RNG.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(k);
    centers.push(samples[rng.gen_range(0..n)]);
    while centers.len() < k {
        let mut best = (0usize, -1.0f64);
        for (i, &s) in samples.iter().enumerate() {
            let d = centers
                .iter()
                .map(|&c| (s - c).abs())
                .fold(f64::MAX, f64::min);
            if d > best.1 {
                best = (i, d);
            }
        }
        centers.push(samples[best.0]);
    }

    // Lloyd iterations until assignments stabilize (at most 100 rounds).
    let mut assignment = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, &s) in samples.iter().enumerate() {
            let mut nearest = 0;
            let mut nearest_d = f64::MAX;
            for (j, &c) in centers.iter().enumerate() {
                let d = (s - c).abs();
                if d < nearest_d {
                    nearest_d = d;
                    nearest = j;
                }
            }
            if assignment[i] != nearest {
                assignment[i] = nearest;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0f64; k];
        let mut counts = vec![0u32; k];
        for (i, &s) in samples.iter().enumerate() {
            sums[assignment[i]] += s;
            counts[assignment[i]] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j] / counts[j] as f64;
            }
        }
    }

    // Median-of-members representation.
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (i, &s) in samples.iter().enumerate() {
        members[assignment[i]].push(s);
    }
    let mut clusters: Vec<Cluster> = members
        .into_iter()
        .map(|mut m| {
            if m.is_empty() {
                Cluster { center: 0.0, size: 0 }
            } else {
                m.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mid = m.len() / 2;
                let center = if m.len() % 2 == 1 {
                    m[mid]
                } else {
                    (m[mid - 1] + m[mid]) / 2.0
                };
                Cluster { center, size: m.len() as u32 }
            }
        })
        .collect();
    clusters.sort_by(|a, b| a.center.partial_cmp(&b.center).unwrap().then(a.size.cmp(&b.size)));
    clusters
}

/// Center of the first cluster (ascending by center) whose cumulative
/// size fraction reaches `q`; `default` when there is no data.
pub fn weighted_quantile(clusters: &[Cluster], q: f64, default: f64) -> f64 {
    let total: u64 = clusters.iter().map(|c| c.size as u64).sum();
    if total == 0 {
        return default;
    }
    let mut sorted: Vec<Cluster> = clusters.to_vec();
    sorted.sort_by(|a, b| a.center.partial_cmp(&b.center).unwrap());
    let mut cum = 0u64;
    for c in &sorted {
        cum += c.size as u64;
        if cum as f64 / total as f64 >= q {
            return c.center;
        }
    }
    sorted.last().unwrap().center
}

/// Free-flow speed of an edge: pool the clusters of all its intersecting
/// directed cells, take the 0.8 volume-weighted quantile (default 20)
/// and clip above to the signalized speed limit.
pub fn free_flow_edge(
    cells: &[CellFraction],
    clusters: &CellClusters,
    speed_limit: f64,
) -> f64 {
    let mut pooled = Vec::new();
    for c in cells {
        if c.row < clusters.rows && c.col < clusters.cols {
            pooled.extend_from_slice(clusters.get(c.row, c.col, c.heading));
        }
    }
    weighted_quantile(&pooled, FREE_FLOW_QUANTILE, FREE_FLOW_DEFAULT_KPH).min(speed_limit)
}

/// Normalize a free-flow speed against the signalized limit `sl`:
/// for sl >= 5 the result is max(clip(ff, 20, sl), 0.6*sl), otherwise
/// max(max(ff, 20), 0.6*sl). The clip applies the lower bound first, so
/// a limit below 20 wins over the floor.
pub fn normalize_free_flow(ff: f64, sl: f64) -> f64 {
    if sl >= 5.0 {
        ff.max(20.0).min(sl).max(0.6 * sl)
    } else {
        ff.max(20.0).max(0.6 * sl)
    }
}

/// Deterministic sample of at most `max` day indices out of `n_days`
/// (partial Fisher-Yates; result sorted).
pub fn sample_days(n_days: usize, max: usize, seed: u64) -> Vec<usize> {
    if n_days <= max {
        return (0..n_days).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n_days).collect();
    for i in 0..max {
        let j = rng.gen_range(i..n_days);
        indices.swap(i, j);
    }
    let mut picked: Vec<usize> = indices[..max].to_vec();
    picked.sort_unstable();
    picked
}

// Per-cell RNG seed, independent of scheduling order (splitmix64 mix).
fn cell_seed(seed: u64, row: usize, col: usize, heading: usize) -> u64 {
    let mut z = seed
        ^ (row as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (col as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
        ^ (heading as u64).wrapping_mul(0x94d0_49bb_1331_11eb);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Cluster every directed cell of a set of aggregated movie days. When
/// more than `CLUSTER_SAMPLE_DAYS` days are given, a seeded uniform
/// sample of days feeds the clustering.
pub fn cluster_movies(days: &[AggMovieDay], k: usize, seed: u64) -> Result<CellClusters> {
    let Some(first) = days.first() else {
        return Err(Error::InvalidConfig("no aggregated days to cluster".into()));
    };
    for d in days {
        if d.rows != first.rows || d.cols != first.cols || d.bins != first.bins {
            return Err(Error::InvalidConfig(
                "aggregated days disagree on tensor shape".into(),
            ));
        }
    }
    let picked = sample_days(days.len(), CLUSTER_SAMPLE_DAYS, seed);
    let (rows, cols) = (first.rows, first.cols);

    let cells: Vec<(usize, usize, Heading)> = (0..rows)
        .flat_map(|r| (0..cols).flat_map(move |c| Heading::ALL.map(move |h| (r, c, h))))
        .collect();

    let data: Vec<Cluster> = cells
        .par_iter()
        .flat_map_iter(|&(row, col, heading)| {
            let mut samples = Vec::new();
            for &di in &picked {
                let day = &days[di];
                for bin in 0..day.bins {
                    if let Some(speed) = day.speed(bin, row, col, heading) {
                        samples.push(speed);
                    }
                }
            }
            let mut clusters =
                cluster_cell(&samples, k, cell_seed(seed, row, col, heading.index()));
            clusters.resize(k, Cluster { center: 0.0, size: 0 });
            clusters
        })
        .collect();

    Ok(CellClusters {
        rows,
        cols,
        clusters_per_cell: k,
        data,
    })
}

#[derive(Serialize, Deserialize)]
struct ClustersHeader {
    kind: String,
    rows: usize,
    cols: usize,
    headings: usize,
    clusters_per_cell: usize,
    heading_order: Vec<String>,
}

/// Persist the cluster tensor: payload is (rows, cols, 4, k, 2) f32 LE
/// pairs of (center, size).
pub fn write_clusters(clusters: &CellClusters, path: &Path) -> Result<()> {
    let header = ClustersHeader {
        kind: "clusters".into(),
        rows: clusters.rows,
        cols: clusters.cols,
        headings: 4,
        clusters_per_cell: clusters.clusters_per_cell,
        heading_order: Heading::ALL.iter().map(|h| h.as_str().to_string()).collect(),
    };
    let mut payload = Vec::with_capacity(clusters.data.len() * 8);
    for c in &clusters.data {
        payload.extend_from_slice(&(c.center as f32).to_le_bytes());
        payload.extend_from_slice(&(c.size as f32).to_le_bytes());
    }
    write_container(path, &header, &payload)
}

pub fn read_clusters(path: &Path) -> Result<CellClusters> {
    let (header, payload): (ClustersHeader, Vec<u8>) = read_container(path)?;
    if header.kind != "clusters" {
        return Err(Error::BadHeader {
            path: path.to_path_buf(),
            reason: format!("expected kind \"clusters\", got {:?}", header.kind),
        });
    }
    let slots = header.rows * header.cols * header.headings * header.clusters_per_cell;
    if payload.len() != slots * 8 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: slots * 8,
            got: payload.len(),
        });
    }
    let mut data = Vec::with_capacity(slots);
    for i in 0..slots {
        let base = i * 8;
        let center = f32::from_le_bytes(payload[base..base + 4].try_into().unwrap()) as f64;
        let size = f32::from_le_bytes(payload[base + 4..base + 8].try_into().unwrap()) as u32;
        data.push(Cluster { center, size });
    }
    Ok(CellClusters {
        rows: header.rows,
        cols: header.cols,
        clusters_per_cell: header.clusters_per_cell,
        data,
    })
}

/// Write per-edge free-flow speeds as CSV with columns u,v,gkey,free_flow_kph.
pub fn write_freeflow_csv(
    rows: &BTreeMap<(u64, u64, u64), f64>,
    path: &Path,
) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["u", "v", "gkey", "free_flow_kph"])?;
    for (&(u, v, gkey), &ff) in rows {
        writer.write_record([
            u.to_string(),
            v.to_string(),
            gkey.to_string(),
            ff.to_string(),
        ])?;
    }
    let bytes = writer.into_inner().expect("in-memory flush");
    atomic_write(path, &bytes)
}

pub fn read_freeflow_csv(path: &Path) -> Result<BTreeMap<(u64, u64, u64), f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Csv(e),
    })?;
    let mut map = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| {
            record.get(i).ok_or_else(|| Error::MalformedRecord {
                path: path.to_path_buf(),
                reason: format!("missing field {i}"),
            })
        };
        let u: u64 = field(0)?.parse().map_err(|_| Error::MalformedRecord {
            path: path.to_path_buf(),
            reason: "bad u".into(),
        })?;
        let v: u64 = field(1)?.parse().map_err(|_| Error::MalformedRecord {
            path: path.to_path_buf(),
            reason: "bad v".into(),
        })?;
        let gkey: u64 = field(2)?.parse().map_err(|_| Error::MalformedRecord {
            path: path.to_path_buf(),
            reason: "bad gkey".into(),
        })?;
        let ff: f64 = field(3)?.parse().map_err(|_| Error::MalformedRecord {
            path: path.to_path_buf(),
            reason: "bad free_flow_kph".into(),
        })?;
        map.insert((u, v, gkey), ff);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples_collapse_to_one_cluster() {
        let samples = vec![50.0; 40];
        let clusters = cluster_cell(&samples, 5, 1);
        let nonzero: Vec<&Cluster> = clusters.iter().filter(|c| c.size > 0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].center, 50.0);
        assert_eq!(nonzero[0].size, 40);
        assert_eq!(clusters.len(), 5);
    }

    #[test]
    fn bimodal_samples_find_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut samples = Vec::new();
        for _ in 0..100 {
            samples.push(20.0 + rng.gen_range(-1.0..1.0));
            samples.push(80.0 + rng.gen_range(-1.0..1.0));
        }
        let clusters = cluster_cell(&samples, 5, 42);
        // No cluster mixes the modes, both modes carry their full mass.
        let mut mass_low = 0u32;
        let mut mass_high = 0u32;
        for c in clusters.iter().filter(|c| c.size > 0) {
            if (c.center - 20.0).abs() < 1.0 {
                mass_low += c.size;
            } else if (c.center - 80.0).abs() < 1.0 {
                mass_high += c.size;
            } else {
                panic!("cluster far from both modes: {c:?}");
            }
        }
        assert_eq!(mass_low, 100);
        assert_eq!(mass_high, 100);
        // Sizes conserve the sample count.
        let total: u32 = clusters.iter().map(|c| c.size).sum();
        assert_eq!(total as usize, samples.len());
    }

    #[test]
    fn clustering_is_deterministic_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<f64> = (0..300).map(|_| rng.gen_range(0.0..120.0)).collect();
        let a = cluster_cell(&samples, 5, 77);
        let b = cluster_cell(&samples, 5, 77);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_samples_yield_empty_list() {
        assert!(cluster_cell(&[], 5, 1).is_empty());
    }

    #[test]
    fn weighted_quantile_examples() {
        let clusters: Vec<Cluster> = [20.0, 30.0, 40.0, 50.0, 60.0]
            .iter()
            .map(|&center| Cluster { center, size: 10 })
            .collect();
        assert_eq!(weighted_quantile(&clusters, 0.8, 20.0), 50.0);
        assert_eq!(weighted_quantile(&[], 0.8, 20.0), 20.0);
        assert_eq!(
            weighted_quantile(&[Cluster { center: 70.0, size: 10 }], 0.8, 20.0),
            70.0
        );
    }

    #[test]
    fn weighted_quantile_monotone_and_q1_is_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let clusters: Vec<Cluster> = (0..5)
                .map(|_| Cluster {
                    center: rng.gen_range(1.0..120.0),
                    size: rng.gen_range(0..20),
                })
                .collect();
            if clusters.iter().all(|c| c.size == 0) {
                continue;
            }
            let base = weighted_quantile(&clusters, 0.8, 20.0);
            // Raising any center weakly raises the quantile.
            for i in 0..clusters.len() {
                let mut raised = clusters.clone();
                raised[i].center += rng.gen_range(0.0..30.0);
                let after = weighted_quantile(&raised, 0.8, 20.0);
                assert!(after >= base - 1e-12, "base {base}, after {after}");
            }
            let max_center = clusters
                .iter()
                .filter(|c| c.size > 0)
                .map(|c| c.center)
                .fold(f64::MIN, f64::max);
            assert_eq!(weighted_quantile(&clusters, 1.0, 20.0), max_center);
        }
    }

    #[test]
    fn free_flow_edge_clips_and_defaults() {
        let clusters = CellClusters {
            rows: 2,
            cols: 2,
            clusters_per_cell: 5,
            data: {
                let mut data = vec![Cluster { center: 0.0, size: 0 }; 2 * 2 * 4 * 5];
                // Cell (0,0,NE): all mass at 80.
                data[0] = Cluster { center: 80.0, size: 10 };
                data
            },
        };
        let cells = vec![CellFraction {
            row: 0,
            col: 0,
            heading: Heading::NE,
            fraction: 1.0,
        }];
        assert_eq!(free_flow_edge(&cells, &clusters, 60.0), 60.0); // clipped to sl
        assert_eq!(free_flow_edge(&cells, &clusters, 120.0), 80.0);
        // No data anywhere: the default applies.
        let empty_cells = vec![CellFraction {
            row: 1,
            col: 1,
            heading: Heading::SW,
            fraction: 1.0,
        }];
        assert_eq!(free_flow_edge(&empty_cells, &clusters, 50.0), 20.0);
        assert_eq!(free_flow_edge(&[], &clusters, 50.0), 20.0);
    }

    #[test]
    fn free_flow_edge_no_clip_branch() {
        let clusters = CellClusters {
            rows: 1,
            cols: 1,
            clusters_per_cell: 5,
            data: {
                let mut data = vec![Cluster { center: 0.0, size: 0 }; 4 * 5];
                data[0] = Cluster { center: 46.5, size: 8 };
                data
            },
        };
        let cells = vec![CellFraction {
            row: 0,
            col: 0,
            heading: Heading::NE,
            fraction: 1.0,
        }];
        assert_eq!(free_flow_edge(&cells, &clusters, 50.0), 46.5);
    }

    #[test]
    fn normalize_free_flow_examples() {
        assert_eq!(normalize_free_flow(10.0, 50.0), 30.0);
        assert_eq!(normalize_free_flow(45.0, 50.0), 45.0);
        assert_eq!(normalize_free_flow(80.0, 50.0), 50.0);
        // Small-sl branch keeps the lower bound of 20.
        assert_eq!(normalize_free_flow(3.0, 4.0), 20.0);
        assert_eq!(normalize_free_flow(90.0, 4.0), 90.0);
        // A limit in [5, 20) wins over the 20-kph floor.
        assert_eq!(normalize_free_flow(40.0, 10.0), 10.0);
    }

    #[test]
    fn normalize_free_flow_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let ff = rng.gen_range(0.0..140.0);
            let sl = rng.gen_range(0.0..140.0);
            let out = normalize_free_flow(ff, sl);
            assert!(out >= f64::min(20.0, 0.6 * sl) - 1e-12);
            assert!(out <= sl.max(0.6 * sl).max(20.0).max(ff) + 1e-12);
        }
    }

    #[test]
    fn sample_days_deterministic_and_bounded() {
        let a = sample_days(50, 20, 9);
        let b = sample_days(50, 20, 9);
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&d| d < 50));
        assert_eq!(sample_days(5, 20, 9), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn clusters_file_roundtrip() {
        let clusters = CellClusters {
            rows: 2,
            cols: 3,
            clusters_per_cell: 5,
            data: (0..2 * 3 * 4 * 5)
                .map(|i| Cluster {
                    center: (i % 120) as f64,
                    size: (i % 7) as u32,
                })
                .collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tensor");
        write_clusters(&clusters, &path).unwrap();
        assert_eq!(read_clusters(&path).unwrap(), clusters);
    }

    #[test]
    fn freeflow_csv_roundtrip() {
        let mut map = BTreeMap::new();
        map.insert((1, 2, 77), 46.5);
        map.insert((2, 1, 11), 20.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ff.csv");
        write_freeflow_csv(&map, &path).unwrap();
        assert_eq!(read_freeflow_csv(&path).unwrap(), map);
    }
}
