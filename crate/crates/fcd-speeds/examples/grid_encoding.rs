//! Grid arithmetic and the 8-bit codes: cells, heading quadrants,
//! volume/speed encoding.
//!
//! ```bash
//! cargo run -p fcd-speeds --example grid_encoding
//! ```

use fcd_speeds::grid::{
    decode_speed, encode_speed, heading_quadrant, EncodingParams, GridConfig,
};

fn main() -> anyhow::Result<()> {
    // The grid is axis-aligned in degrees; rows/cols derive from the box.
    let cfg = GridConfig::new(52.359, 52.854, 13.189, 13.625, 0.001, 288)?;
    println!("grid: {} rows x {} cols, {} bins/day", cfg.rows, cfg.cols, cfg.bins_per_day);

    let (lat, lon) = (52.5005, 13.4005);
    let cell = cfg.cell_of(lat, lon);
    println!("cell of ({lat}, {lon}) = {cell:?} (row 0 is the northern row)");
    println!("time bin of 12:00:00 = {:?}", cfg.bin_of(12.0 * 3600.0));

    for angle in [0.0, 45.0, 90.0, 179.9, 270.0] {
        println!("heading of {angle:>6.1} deg = {}", heading_quadrant(angle));
    }

    // Speeds cap at 120 kph, codes are 1..=255 so 0 stays "no data".
    for v in [0.0, 33.3, 90.0, 120.0, 140.0] {
        let code = encode_speed(v);
        println!("speed {v:>6.1} kph -> code {code:>3} -> {:>7.3} kph", decode_speed(code));
    }

    // Volume codes honor the privacy threshold.
    let enc = EncodingParams {
        privacy_threshold: 2,
        volume_cutoff: 255,
        volume_scale_divisor: 255,
    };
    for count in [0u32, 1, 2, 3, 10, 300] {
        println!("volume {count:>3} -> code {:>3}", enc.encode_volume(count));
    }
    Ok(())
}
