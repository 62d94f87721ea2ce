//! Spot binning: aggregation of raw GPS probes into one-day movie tensors
//! of 8-bit volume/speed codes per (time bin, cell, heading).

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::container::{atomic_write, read_container, write_container};
use crate::error::{Error, Result};
use crate::grid::{
    encode_speed, heading_quadrant, normalize_angle, EncodingParams, GridConfig, Heading,
    CHANNELS, SECONDS_PER_DAY,
};

/// One raw GPS probe: second-of-day, position, heading angle and speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
    pub angle: f64,
    pub speed: f64,
}

/// One day of spot-binned probes: a (bins, rows, cols, 8) uint8 tensor.
/// Channel 2k holds the volume code and channel 2k+1 the speed code of
/// heading k in the order NE, SE, SW, NW.
#[derive(Debug, Clone, PartialEq)]
pub struct MovieDay {
    pub day: NaiveDate,
    pub rows: usize,
    pub cols: usize,
    pub bins: usize,
    pub data: Vec<u8>,
}

impl MovieDay {
    pub fn zeros(day: NaiveDate, cfg: &GridConfig) -> MovieDay {
        MovieDay {
            day,
            rows: cfg.rows,
            cols: cfg.cols,
            bins: cfg.bins_per_day,
            data: vec![0; cfg.bins_per_day * cfg.rows * cfg.cols * CHANNELS],
        }
    }

    #[inline]
    fn offset(&self, bin: usize, row: usize, col: usize, channel: usize) -> usize {
        ((bin * self.rows + row) * self.cols + col) * CHANNELS + channel
    }

    pub fn get(&self, bin: usize, row: usize, col: usize, channel: usize) -> u8 {
        self.data[self.offset(bin, row, col, channel)]
    }

    pub fn set(&mut self, bin: usize, row: usize, col: usize, channel: usize, value: u8) {
        let i = self.offset(bin, row, col, channel);
        self.data[i] = value;
    }

    pub fn volume_code(&self, bin: usize, row: usize, col: usize, heading: Heading) -> u8 {
        self.get(bin, row, col, 2 * heading.index())
    }

    pub fn speed_code(&self, bin: usize, row: usize, col: usize, heading: Heading) -> u8 {
        self.get(bin, row, col, 2 * heading.index() + 1)
    }
}

/// Accounting of a binning run. Every input probe is either binned,
/// dropped as out-of-box, or rejected as malformed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BinReport {
    pub binned: u64,
    pub out_of_box: u64,
    pub rejected: u64,
}

/// Aggregate probes of one day into the movie tensor.
///
/// Probe speeds are clipped to [0, 120] and averaged in full precision per
/// (bin, cell, heading); counts and means then pass through the volume and
/// speed encodings, with the speed forced to 0 wherever the encoded volume
/// is 0. Out-of-box probes are counted and dropped; probes with non-finite
/// fields or an out-of-day timestamp are counted as rejected.
pub fn bin_probes(
    probes: &[Probe],
    day: NaiveDate,
    cfg: &GridConfig,
    enc: &EncodingParams,
) -> (MovieDay, BinReport) {
    let slots = cfg.bins_per_day * cfg.rows * cfg.cols * 4;
    let mut counts = vec![0u32; slots];
    let mut speed_sums = vec![0f64; slots];
    let mut report = BinReport::default();

    for p in probes {
        if !(p.t.is_finite() && p.lat.is_finite() && p.lon.is_finite() && p.angle.is_finite())
            || !p.speed.is_finite()
            || p.speed < 0.0
            || p.t < 0.0
            || p.t >= SECONDS_PER_DAY
        {
            report.rejected += 1;
            continue;
        }
        let Some(bin) = cfg.bin_of(p.t) else {
            report.rejected += 1;
            continue;
        };
        let Some((row, col)) = cfg.cell_of(p.lat, p.lon) else {
            report.out_of_box += 1;
            continue;
        };
        let heading = heading_quadrant(normalize_angle(p.angle));
        let slot = ((bin * cfg.rows + row) * cfg.cols + col) * 4 + heading.index();
        counts[slot] += 1;
        speed_sums[slot] += p.speed.clamp(0.0, crate::grid::SPEED_CAP_KPH);
        report.binned += 1;
    }

    let mut movie = MovieDay::zeros(day, cfg);
    for slot in 0..slots {
        let count = counts[slot];
        if count == 0 {
            continue;
        }
        let vol_code = enc.encode_volume(count);
        let speed_code = if vol_code > 0 {
            encode_speed(speed_sums[slot] / count as f64)
        } else {
            0
        };
        let base = slot / 4 * CHANNELS + (slot % 4) * 2;
        movie.data[base] = vol_code;
        movie.data[base + 1] = speed_code;
    }
    (movie, report)
}

#[derive(Serialize, Deserialize)]
struct MovieHeader {
    kind: String,
    day: NaiveDate,
    rows: usize,
    cols: usize,
    bins: usize,
    channel_order: Vec<String>,
    encoding: EncodingParams,
}

fn channel_order() -> Vec<String> {
    Heading::ALL.iter().map(|h| h.as_str().to_string()).collect()
}

pub(crate) fn validate_dims(
    path: &Path,
    rows: usize,
    cols: usize,
    bins: usize,
    channel_order_seen: &[String],
) -> Result<()> {
    if rows == 0 || cols == 0 || bins == 0 {
        return Err(Error::DimensionMismatch {
            path: path.to_path_buf(),
            reason: format!("non-positive dimensions ({bins}, {rows}, {cols})"),
        });
    }
    if channel_order_seen != channel_order().as_slice() {
        return Err(Error::DimensionMismatch {
            path: path.to_path_buf(),
            reason: format!("unexpected channel order {channel_order_seen:?}"),
        });
    }
    Ok(())
}

/// Write a movie in the canonical container: 64-byte magic block, JSON
/// header, then the raw tensor in (bin, row, col, channel) order.
pub fn write_movie(movie: &MovieDay, enc: &EncodingParams, path: &Path) -> Result<()> {
    let header = MovieHeader {
        kind: "movie".into(),
        day: movie.day,
        rows: movie.rows,
        cols: movie.cols,
        bins: movie.bins,
        channel_order: channel_order(),
        encoding: *enc,
    };
    write_container(path, &header, &movie.data)
}

/// Read a movie back; the round trip is bit-exact.
pub fn read_movie(path: &Path) -> Result<(MovieDay, EncodingParams)> {
    let (header, payload): (MovieHeader, Vec<u8>) = read_container(path)?;
    if header.kind != "movie" {
        return Err(Error::BadHeader {
            path: path.to_path_buf(),
            reason: format!("expected kind \"movie\", got {:?}", header.kind),
        });
    }
    validate_dims(path, header.rows, header.cols, header.bins, &header.channel_order)?;
    let expected = header.bins * header.rows * header.cols * CHANNELS;
    if payload.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            got: payload.len(),
        });
    }
    Ok((
        MovieDay {
            day: header.day,
            rows: header.rows,
            cols: header.cols,
            bins: header.bins,
            data: payload,
        },
        header.encoding,
    ))
}

/// Read probes from CSV with columns t,lat,lon,angle,speed.
pub fn read_probes_csv(path: &Path) -> Result<Vec<Probe>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => {
            let msg = e.to_string();
            Error::io(path, std::io::Error::other(msg))
        }
        _ => Error::Csv(e),
    })?;
    let mut probes = Vec::new();
    for record in reader.deserialize::<ProbeRow>() {
        let row = record?;
        probes.push(Probe {
            t: row.t,
            lat: row.lat,
            lon: row.lon,
            angle: row.angle,
            speed: row.speed,
        });
    }
    Ok(probes)
}

/// Write probes as CSV with columns t,lat,lon,angle,speed.
pub fn write_probes_csv(probes: &[Probe], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for p in probes {
        writer.serialize(ProbeRow {
            t: p.t,
            lat: p.lat,
            lon: p.lon,
            angle: p.angle,
            speed: p.speed,
        })?;
    }
    let bytes = writer.into_inner().expect("in-memory flush");
    atomic_write(path, &bytes)
}

#[derive(Serialize, Deserialize)]
struct ProbeRow {
    t: f64,
    lat: f64,
    lon: f64,
    angle: f64,
    speed: f64,
}
