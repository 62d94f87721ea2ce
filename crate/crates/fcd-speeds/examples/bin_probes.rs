//! Spot-bin raw GPS probes into a one-day movie tensor and round-trip it
//! through the canonical movie file.
//!
//! ```bash
//! cargo run -p fcd-speeds --example bin_probes
//! ```

use fcd_speeds::grid::{EncodingParams, GridConfig, Heading};
use fcd_speeds::spotbin::{bin_probes, read_movie, write_movie, Probe};

fn main() -> anyhow::Result<()> {
    let cfg = GridConfig::new(48.0, 48.01, 11.0, 11.01, 0.001, 288)?;
    let enc = EncodingParams::default();
    let day = "2019-01-02".parse()?;

    // Two vehicles crossing cell (3, 4) northeast-bound in the first
    // 5-minute bin, plus strays that get dropped or rejected.
    let (lat, lon) = cfg.cell_center(3, 4);
    let probes = vec![
        Probe { t: 30.0, lat, lon, angle: 40.0, speed: 60.0 },
        Probe { t: 75.0, lat, lon, angle: 50.0, speed: 120.0 },
        Probe { t: 75.0, lat: 55.0, lon, angle: 50.0, speed: 80.0 }, // out of box
        Probe { t: -5.0, lat, lon, angle: 50.0, speed: 80.0 },       // bad timestamp
    ];

    let (movie, report) = bin_probes(&probes, day, &cfg, &enc);
    println!(
        "binned {} probes ({} out of box, {} rejected)",
        report.binned, report.out_of_box, report.rejected
    );
    println!(
        "cell (3,4) NE: volume code {}, speed code {} (raw mean 90 kph)",
        movie.volume_code(0, 3, 4, Heading::NE),
        movie.speed_code(0, 3, 4, Heading::NE),
    );

    let dir = tempfile::tempdir()?;
    let path = dir.path().join(format!("{day}.movie"));
    write_movie(&movie, &enc, &path)?;
    let (back, _) = read_movie(&path)?;
    println!(
        "movie file {} ({} bytes) round-trips bit-exactly: {}",
        path.display(),
        std::fs::metadata(&path)?.len(),
        back == movie
    );
    Ok(())
}
