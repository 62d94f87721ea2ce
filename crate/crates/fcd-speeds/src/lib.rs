//! Floating-car-data disaggregation: GPS probes are spot-binned into
//! privacy-preserving traffic-map-movie tensors and joined onto a
//! directed road graph to yield per-segment median speeds, free-flow
//! estimates and confidence-filtered outputs.
//!
//! The crate is organized along the pipeline stages:
//!
//! - [`grid`]: grid arithmetic, heading quadrants, 8-bit encodings
//! - [`spotbin`]: probe aggregation into movie tensors and movie files
//! - [`taggr`]: temporal aggregation (5-minute to 15-minute bins)
//! - [`roadgraph`]: portable road graph ingestion
//! - [`sjoin`]: spatial join of edges onto directed grid cells
//! - [`freeflow`]: per-cell speed clustering and free-flow selection
//! - [`segspeed`]: per-segment speeds and confidence filtering
//! - [`fcdsim`]: synthetic fleets and independent verification oracles
//! - [`compare`]: matching and diff/APE statistics between two sources
//! - [`pipeline`]: stage orchestration over file artifacts and the demo
//!
//! See the `examples/` directory for one runnable example per stage and
//! the `fcd-speeds` binary for the subcommand interface.

pub mod compare;
mod container;
pub mod error;
pub mod fcdsim;
pub mod freeflow;
pub mod grid;
pub mod pipeline;
pub mod roadgraph;
pub mod segspeed;
pub mod sjoin;
pub mod spotbin;
pub mod taggr;

pub use error::{Error, Result};
