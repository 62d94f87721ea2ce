//! Temporal aggregation of movie days from 5-minute bins to coarser bins:
//! volumes are summed as codes, speeds are decoded to kph and averaged
//! over constituent bins with nonzero volume.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::container::{read_container, write_container};
use crate::error::{Error, Result};
use crate::grid::{decode_speed, EncodingParams, Heading};
use crate::spotbin::MovieDay;

/// Aggregated movie day: per (bin, cell, heading) a 32-bit volume code
/// sum and a real kph speed (NaN marks no-data).
#[derive(Debug, Clone, PartialEq)]
pub struct AggMovieDay {
    pub day: NaiveDate,
    pub rows: usize,
    pub cols: usize,
    pub bins: usize,
    pub agg_factor: usize,
    pub volumes: Vec<u32>,
    pub speeds: Vec<f32>,
}

impl AggMovieDay {
    #[inline]
    pub fn slot(&self, bin: usize, row: usize, col: usize, heading: Heading) -> usize {
        ((bin * self.rows + row) * self.cols + col) * 4 + heading.index()
    }

    pub fn volume(&self, bin: usize, row: usize, col: usize, heading: Heading) -> u32 {
        self.volumes[self.slot(bin, row, col, heading)]
    }

    /// `None` when no constituent bin carried data.
    pub fn speed(&self, bin: usize, row: usize, col: usize, heading: Heading) -> Option<f64> {
        let s = self.speeds[self.slot(bin, row, col, heading)];
        if s.is_nan() {
            None
        } else {
            Some(s as f64)
        }
    }
}

/// Aggregate `factor` consecutive time bins into one (default chain is
/// 288 five-minute bins -> 96 fifteen-minute bins with factor 3).
pub fn aggregate(movie: &MovieDay, factor: usize) -> Result<AggMovieDay> {
    if factor == 0 || movie.bins % factor != 0 {
        return Err(Error::BadAggFactor {
            factor,
            bins: movie.bins,
        });
    }
    let bins_out = movie.bins / factor;
    let slots = bins_out * movie.rows * movie.cols * 4;
    let mut volumes = vec![0u32; slots];
    let mut speeds = vec![f32::NAN; slots];

    for bin_out in 0..bins_out {
        for row in 0..movie.rows {
            for col in 0..movie.cols {
                for heading in Heading::ALL {
                    let mut vol_sum = 0u32;
                    let mut speed_sum = 0f64;
                    let mut speed_n = 0u32;
                    for k in 0..factor {
                        let bin = bin_out * factor + k;
                        let vol = movie.volume_code(bin, row, col, heading);
                        vol_sum += vol as u32;
                        if vol > 0 {
                            speed_sum += decode_speed(movie.speed_code(bin, row, col, heading));
                            speed_n += 1;
                        }
                    }
                    let slot =
                        ((bin_out * movie.rows + row) * movie.cols + col) * 4 + heading.index();
                    volumes[slot] = vol_sum;
                    if speed_n > 0 {
                        speeds[slot] = (speed_sum / speed_n as f64) as f32;
                    }
                }
            }
        }
    }

    Ok(AggMovieDay {
        day: movie.day,
        rows: movie.rows,
        cols: movie.cols,
        bins: bins_out,
        agg_factor: factor,
        volumes,
        speeds,
    })
}

#[derive(Serialize, Deserialize)]
struct AggHeader {
    kind: String,
    day: NaiveDate,
    rows: usize,
    cols: usize,
    bins: usize,
    agg_factor: usize,
    channel_order: Vec<String>,
    encoding: EncodingParams,
}

/// Same container as the raw movie, with an agg_factor header flag;
/// volume channels are u32 LE and speed channels f32 LE, interleaved in
/// (bin, row, col, channel) order.
pub fn write_agg(agg: &AggMovieDay, enc: &EncodingParams, path: &Path) -> Result<()> {
    let header = AggHeader {
        kind: "agg".into(),
        day: agg.day,
        rows: agg.rows,
        cols: agg.cols,
        bins: agg.bins,
        agg_factor: agg.agg_factor,
        channel_order: Heading::ALL.iter().map(|h| h.as_str().to_string()).collect(),
        encoding: *enc,
    };
    let mut payload = Vec::with_capacity(agg.volumes.len() * 8);
    for i in 0..agg.volumes.len() {
        payload.extend_from_slice(&agg.volumes[i].to_le_bytes());
        payload.extend_from_slice(&agg.speeds[i].to_le_bytes());
    }
    write_container(path, &header, &payload)
}

pub fn read_agg(path: &Path) -> Result<(AggMovieDay, EncodingParams)> {
    let (header, payload): (AggHeader, Vec<u8>) = read_container(path)?;
    if header.kind != "agg" {
        return Err(Error::BadHeader {
            path: path.to_path_buf(),
            reason: format!("expected kind \"agg\", got {:?}", header.kind),
        });
    }
    crate::spotbin::validate_dims(path, header.rows, header.cols, header.bins, &header.channel_order)?;
    let slots = header.bins * header.rows * header.cols * 4;
    if payload.len() != slots * 8 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: slots * 8,
            got: payload.len(),
        });
    }
    let mut volumes = Vec::with_capacity(slots);
    let mut speeds = Vec::with_capacity(slots);
    for i in 0..slots {
        let base = i * 8;
        volumes.push(u32::from_le_bytes(payload[base..base + 4].try_into().unwrap()));
        speeds.push(f32::from_le_bytes(payload[base + 4..base + 8].try_into().unwrap()));
    }
    Ok((
        AggMovieDay {
            day: header.day,
            rows: header.rows,
            cols: header.cols,
            bins: header.bins,
            agg_factor: header.agg_factor,
            volumes,
            speeds,
        },
        header.encoding,
    ))
}
