//! Aggregate 5-minute movie bins into 15-minute bins: volumes sum, speeds
//! decode to kph and average over the bins that carried data.
//!
//! ```bash
//! cargo run -p fcd-speeds --example temporal_aggregation
//! ```

use fcd_speeds::grid::{decode_speed, GridConfig, Heading};
use fcd_speeds::spotbin::MovieDay;
use fcd_speeds::taggr::aggregate;

fn main() -> anyhow::Result<()> {
    let cfg = GridConfig::new(48.0, 48.001, 11.0, 11.001, 0.001, 288)?;
    let mut movie = MovieDay::zeros("2019-01-02".parse()?, &cfg);

    // Three consecutive 5-minute bins in one cell: an empty one and two
    // with data.
    let codes = [(0u8, 0u8), (10, 106), (10, 149)];
    for (bin, (vol, speed)) in codes.into_iter().enumerate() {
        movie.set(bin, 0, 0, 0, vol);
        movie.set(bin, 0, 0, 1, speed);
    }
    for (vol, speed) in codes {
        println!(
            "5-min bin: volume code {vol:>3}, speed code {speed:>3} ({:.2} kph)",
            decode_speed(speed)
        );
    }

    let agg = aggregate(&movie, 3)?;
    println!(
        "15-min bin: volume {} (code sum), speed {:?} kph (mean over nonzero bins)",
        agg.volume(0, 0, 0, Heading::NE),
        agg.speed(0, 0, 0, Heading::NE),
    );

    // Zero-volume slots stay no-data rather than averaging in zeros.
    println!(
        "empty slot stays no-data: {:?}",
        agg.speed(0, 0, 0, Heading::SW)
    );
    Ok(())
}
