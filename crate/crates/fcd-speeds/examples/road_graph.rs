//! Load a portable road graph file: validation, maxspeed resolution and
//! stable geometry keys.
//!
//! ```bash
//! cargo run -p fcd-speeds --example road_graph
//! ```

use fcd_speeds::roadgraph::{gkey, load_graph, resolve_maxspeed, GraphOptions, MaxspeedPolicy};

const GRAPH_JSON: &str = r#"{
  "nodes": [
    {"id": 1, "lat": 48.0000, "lon": 11.0000},
    {"id": 2, "lat": 48.0030, "lon": 11.0025},
    {"id": 3, "lat": 48.0030, "lon": 11.0000}
  ],
  "edges": [
    {"u": 1, "v": 2, "highway": "primary", "maxspeed": [50, 60],
     "geometry": [[48.0000, 11.0000], [48.0012, 11.0007], [48.0030, 11.0025]]},
    {"u": 2, "v": 1, "highway": "primary", "maxspeed": [50, 60],
     "geometry": [[48.0030, 11.0025], [48.0012, 11.0007], [48.0000, 11.0000]]},
    {"u": 1, "v": 3, "highway": "residential",
     "geometry": [[48.0000, 11.0000], [48.0030, 11.0000]]}
  ]
}"#;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("graph.json");
    std::fs::write(&path, GRAPH_JSON)?;

    let graph = load_graph(&path, &GraphOptions::default())?;
    println!("{} nodes, {} edges", graph.nodes.len(), graph.edges.len());
    for edge in &graph.edges {
        println!(
            "edge ({}, {}, {:>20}) {:<12} {:>6.1} m, limit {:>5.1} kph",
            edge.u, edge.v, edge.gkey, edge.highway, edge.length_m, edge.speed_kph
        );
    }

    // The two directions of the same street hash to different keys.
    let forward = &graph.edges[0].geometry;
    let backward: Vec<(f64, f64)> = forward.iter().rev().copied().collect();
    println!("forward gkey {} != backward gkey {}", gkey(forward), gkey(&backward));

    // Maxspeed policies: mean (default) vs max, and per-class fallbacks.
    let opts = GraphOptions::default();
    println!(
        "maxspeed [50, 60]: mean -> {}, max -> {}",
        resolve_maxspeed(&[50.0, 60.0], "primary", MaxspeedPolicy::Mean, &opts)?,
        resolve_maxspeed(&[50.0, 60.0], "primary", MaxspeedPolicy::Max, &opts)?,
    );
    println!(
        "missing maxspeed on residential -> default {}",
        resolve_maxspeed(&[], "residential", MaxspeedPolicy::Mean, &opts)?
    );
    Ok(())
}
