use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the pipeline stages and the file formats they read and write.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid config: {0}")]
    InvalidConfig(String),

    #[error("point ({lat}, {lon}) is outside the bounding box")]
    OutOfBounds { lat: f64, lon: f64 },

    #[error("aggregation factor {factor} does not divide {bins} bins per day")]
    BadAggFactor { factor: usize, bins: usize },

    #[error("edge ({u}, {v}) references missing node {node}")]
    DanglingNode { u: u64, v: u64, node: u64 },

    #[error("edge ({u}, {v}) has a degenerate geometry ({points} point(s))")]
    DegenerateGeometry { u: u64, v: u64, points: usize },

    #[error("edge ({u}, {v}) geometry does not start/end at its node coordinates")]
    GeometryEndpointMismatch { u: u64, v: u64 },

    #[error("duplicate edge key ({u}, {v}, {gkey})")]
    DuplicateEdge { u: u64, v: u64, gkey: u64 },

    #[error("edge ({u}, {v}) has zero length")]
    ZeroLengthEdge { u: u64, v: u64 },

    #[error("non-positive maxspeed value {0}")]
    NonPositiveMaxspeed(f64),

    #[error("edge ({0}, {1}, {2}) not found in the road graph")]
    UnknownEdge(u64, u64, u64),

    #[error("non-positive speed {0} in harmonic mean")]
    NonPositiveSpeed(f64),

    #[error("non-positive free flow speed {0}")]
    NonPositiveFreeFlow(f64),

    #[error("non-positive reference speed {0}")]
    NonPositiveReference(f64),

    #[error("invalid filter policy: {0}")]
    InvalidFilterPolicy(String),

    #[error("invalid join params: {0}")]
    InvalidJoinParams(String),

    #[error("fleet spec invalid: {0}")]
    InvalidFleetSpec(String),

    #[error("bad container header in {path}: {reason}")]
    BadHeader { path: PathBuf, reason: String },

    #[error("truncated payload in {path}: expected {expected} bytes, got {got}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        got: usize,
    },

    #[error("tensor dimension mismatch in {path}: {reason}")]
    DimensionMismatch { path: PathBuf, reason: String },

    #[error("malformed record in {path}: {reason}")]
    MalformedRecord { path: PathBuf, reason: String },

    #[error("missing artifact {path}: run stage {stage} ({subcommand}) first")]
    MissingArtifact {
        stage: &'static str,
        subcommand: &'static str,
        path: PathBuf,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
