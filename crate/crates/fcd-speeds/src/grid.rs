//! Geo-referenced grid arithmetic, heading quadrants and the 8-bit
//! volume/speed encodings shared by all pipeline stages.
//!
//! The grid is axis-aligned in plain degree space. Row 0 is the northern
//! row, column 0 the western column, so the tensor renders like an image.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channels per cell: (volume, speed) for each of the four headings.
pub const CHANNELS: usize = 8;

/// Speeds are capped at this value before encoding.
pub const SPEED_CAP_KPH: f64 = 120.0;

/// Largest 8-bit code.
pub const CODE_MAX: u8 = 255;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Bearing quadrant of a probe or road segment. The four intervals
/// partition [0, 360): NE [0,90), SE [90,180), SW [180,270), NW [270,360).
///
/// The declaration order is the channel order of the movie tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Heading {
    NE,
    SE,
    SW,
    NW,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::NE, Heading::SE, Heading::SW, Heading::NW];

    /// Index of this heading in the channel order (volume channel = 2*index).
    pub fn index(self) -> usize {
        match self {
            Heading::NE => 0,
            Heading::SE => 1,
            Heading::SW => 2,
            Heading::NW => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Heading> {
        Heading::ALL.get(i).copied()
    }

    /// Half-open bearing interval [lo, hi) covered by this heading.
    pub fn interval(self) -> (f64, f64) {
        match self {
            Heading::NE => (0.0, 90.0),
            Heading::SE => (90.0, 180.0),
            Heading::SW => (180.0, 270.0),
            Heading::NW => (270.0, 360.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Heading::NE => "NE",
            Heading::SE => "SE",
            Heading::SW => "SW",
            Heading::NW => "NW",
        }
    }
}

impl fmt::Display for Heading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Heading {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "NE" => Ok(Heading::NE),
            "SE" => Ok(Heading::SE),
            "SW" => Ok(Heading::SW),
            "NW" => Ok(Heading::NW),
            other => Err(format!("unknown heading {other:?}")),
        }
    }
}

/// Quadrant containing `angle`. The caller normalizes to [0, 360) first.
pub fn heading_quadrant(angle: f64) -> Heading {
    debug_assert!((0.0..360.0).contains(&angle), "angle not normalized: {angle}");
    if angle < 90.0 {
        Heading::NE
    } else if angle < 180.0 {
        Heading::SE
    } else if angle < 270.0 {
        Heading::SW
    } else {
        Heading::NW
    }
}

/// Normalize an angle in degrees to [0, 360).
pub fn normalize_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(360.0);
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

/// Geo-referenced grid covering one city bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub cell_size: f64,
    pub rows: usize,
    pub cols: usize,
    pub bins_per_day: usize,
}

impl GridConfig {
    /// Build a grid over a bounding box; rows/cols are derived from the
    /// box extent and the cell size.
    pub fn new(
        lat_min: f64,
        lat_max: f64,
        lon_min: f64,
        lon_max: f64,
        cell_size: f64,
        bins_per_day: usize,
    ) -> Result<GridConfig> {
        if !(cell_size > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "cell_size must be > 0, got {cell_size}"
            )));
        }
        if !(lat_max > lat_min) || !(lon_max > lon_min) {
            return Err(Error::InvalidConfig(format!(
                "empty bounding box ({lat_min}, {lat_max}, {lon_min}, {lon_max})"
            )));
        }
        if bins_per_day == 0 {
            return Err(Error::InvalidConfig("bins_per_day must be > 0".into()));
        }
        let rows = ((lat_max - lat_min) / cell_size).round() as usize;
        let cols = ((lon_max - lon_min) / cell_size).round() as usize;
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig(
                "bounding box smaller than one cell".into(),
            ));
        }
        Ok(GridConfig {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
            cell_size,
            rows,
            cols,
            bins_per_day,
        })
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }

    /// Cell of a point, or `None` when it lies outside the bounding box.
    ///
    /// Row 0 sits at `lat_max` and counts southwards; column 0 sits at
    /// `lon_min` and counts eastwards. Points exactly on an interior
    /// boundary belong to the higher-index cell; the outer maxima
    /// (`lat_min` for rows, `lon_max` for columns) clamp to the last cell.
    pub fn cell_of(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        if !self.contains(lat, lon) {
            return None;
        }
        let row = ((self.lat_max - lat) / self.cell_size).floor() as usize;
        let col = ((lon - self.lon_min) / self.cell_size).floor() as usize;
        Some((row.min(self.rows - 1), col.min(self.cols - 1)))
    }

    /// Center coordinates of a cell.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.lat_max - (row as f64 + 0.5) * self.cell_size,
            self.lon_min + (col as f64 + 0.5) * self.cell_size,
        )
    }

    /// Bounding rectangle of a cell as (lat_lo, lat_hi, lon_lo, lon_hi).
    pub fn cell_rect(&self, row: usize, col: usize) -> (f64, f64, f64, f64) {
        let lat_hi = self.lat_max - row as f64 * self.cell_size;
        let lon_lo = self.lon_min + col as f64 * self.cell_size;
        (lat_hi - self.cell_size, lat_hi, lon_lo, lon_lo + self.cell_size)
    }

    pub fn seconds_per_bin(&self) -> f64 {
        SECONDS_PER_DAY / self.bins_per_day as f64
    }

    /// Time bin of a second-of-day, or `None` outside [0, 86400).
    pub fn bin_of(&self, t: f64) -> Option<usize> {
        if !t.is_finite() || t < 0.0 || t >= SECONDS_PER_DAY {
            return None;
        }
        let bin = (t / self.seconds_per_bin()).floor() as usize;
        Some(bin.min(self.bins_per_day - 1))
    }
}

/// Parameters of the 8-bit volume encoding. The speed encoding is fixed
/// (cap 120 kph scaled to code 255).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingParams {
    /// Privacy volume threshold; counts below it encode to 0.
    pub privacy_threshold: u32,
    /// Volume cutoff; counts are clipped to it before scaling.
    pub volume_cutoff: u32,
    /// Divisor of the 255/co scaling applied to the clipped count.
    pub volume_scale_divisor: u32,
}

impl Default for EncodingParams {
    fn default() -> Self {
        EncodingParams {
            privacy_threshold: 0,
            volume_cutoff: 255,
            volume_scale_divisor: 255,
        }
    }
}

impl EncodingParams {
    pub fn validate(&self) -> Result<()> {
        if self.privacy_threshold >= self.volume_cutoff {
            return Err(Error::InvalidConfig(format!(
                "privacy_threshold {} must be < volume_cutoff {}",
                self.privacy_threshold, self.volume_cutoff
            )));
        }
        if self.volume_scale_divisor == 0 {
            return Err(Error::InvalidConfig(
                "volume_scale_divisor must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// 8-bit volume code of a probe count:
    /// `round(clip(count - threshold, 0, cutoff) * 255 / divisor)`, clipped to 255.
    pub fn encode_volume(&self, count: u32) -> u8 {
        let clipped = count
            .saturating_sub(self.privacy_threshold)
            .min(self.volume_cutoff) as f64;
        let code = (clipped * 255.0 / self.volume_scale_divisor as f64).round();
        code.min(255.0) as u8
    }
}

/// 8-bit speed code of a kph value. Speeds are clipped to [0, 120] and
/// linearly scaled so the cap maps to 255; codes are floored at 1 so that
/// code 0 always means "no data".
pub fn encode_speed(v_kph: f64) -> u8 {
    let code = (v_kph.clamp(0.0, SPEED_CAP_KPH) * 255.0 / SPEED_CAP_KPH).round() as u8;
    code.max(1)
}

/// Inverse of the speed scaling.
pub fn decode_speed(code: u8) -> f64 {
    code as f64 * SPEED_CAP_KPH / 255.0
}

/// JSON grid config file. Carries the bounding box plus the encoding
/// parameters; rows/cols are always derived.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfigFile {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    #[serde(default = "default_bins_per_day")]
    pub bins_per_day: usize,
    #[serde(default)]
    pub privacy_threshold: u32,
    #[serde(default = "default_volume_cutoff")]
    pub volume_cutoff: u32,
    /// Defaults to `volume_cutoff` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_scale_divisor: Option<u32>,
}

fn default_cell_size() -> f64 {
    0.001
}

fn default_bins_per_day() -> usize {
    288
}

fn default_volume_cutoff() -> u32 {
    255
}

impl GridConfigFile {
    pub fn load(path: &Path) -> Result<GridConfigFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn build(&self) -> Result<(GridConfig, EncodingParams)> {
        let grid = GridConfig::new(
            self.lat_min,
            self.lat_max,
            self.lon_min,
            self.lon_max,
            self.cell_size,
            self.bins_per_day,
        )?;
        let enc = EncodingParams {
            privacy_threshold: self.privacy_threshold,
            volume_cutoff: self.volume_cutoff,
            volume_scale_divisor: self.volume_scale_divisor.unwrap_or(self.volume_cutoff),
        };
        enc.validate()?;
        Ok((grid, enc))
    }
}
