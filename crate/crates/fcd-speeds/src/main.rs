use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use fcd_speeds::compare::GroupBy;
use fcd_speeds::pipeline::{self, FilterMode, PipelineConfig, Stage};
use fcd_speeds::roadgraph::MaxspeedPolicy;

#[derive(Parser)]
#[command(name = "fcd-speeds", about = "GPS probe spot-binning and segment speed pipeline")]
struct Cli {
    /// Pipeline config JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spot-bin probe CSVs into movie files.
    Bin,
    /// dp01: aggregate movie days temporally.
    Aggregate,
    /// dp03-load + dp04: load the road graph and join it onto the grid.
    Join {
        /// Maxspeed resolution policy override (mean|max).
        #[arg(long, value_parser = parse_maxspeed_policy)]
        maxspeed_policy: Option<MaxspeedPolicy>,
    },
    /// dp02: cluster cell speeds.
    Cluster,
    /// dp05: derive per-edge free-flow speeds.
    Freeflow,
    /// dp06: derive per-segment speeds with optional confidence filtering.
    Speeds {
        /// Filter mode override (paired|verbatim|off).
        #[arg(long, value_parser = parse_filter_mode)]
        filter: Option<FilterMode>,
        /// Normalize free-flow speeds against the signalized limit (on|off).
        #[arg(long, value_parser = parse_on_off)]
        normalize_freeflow: Option<bool>,
    },
    /// Generate probes from a fleet scenario file.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Match two segment CSVs and write diff/APE statistics.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Average source-a bins into hours before matching.
        #[arg(long)]
        hour_mean: bool,
        /// Grouping of the diff tables (highway|length|complexity).
        #[arg(long, default_value = "highway", value_parser = parse_group_by)]
        group_by: GroupBy,
    },
    /// Build the synthetic city, run the full pipeline and print the
    /// verification summary.
    Demo {
        /// Directory for the demo tree.
        #[arg(long, default_value = "demo")]
        out: PathBuf,
    },
}

fn parse_maxspeed_policy(s: &str) -> Result<MaxspeedPolicy, String> {
    s.parse()
}

fn parse_filter_mode(s: &str) -> Result<FilterMode, String> {
    s.parse()
}

fn parse_group_by(s: &str) -> Result<GroupBy, String> {
    s.parse()
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        other => Err(format!("expected on|off, got {other:?}")),
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let Some(path) = &cli.config else {
        bail!("this subcommand needs --config pointing at a pipeline config JSON");
    };
    let mut cfg = PipelineConfig::load(path)
        .with_context(|| format!("loading config {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();

    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("building the thread pool")?;
    }

    let summary = match &cli.command {
        Command::Bin => pipeline::run_bin(&load_config(&cli)?)?,
        Command::Aggregate => pipeline::run_stage(Stage::Aggregate, &load_config(&cli)?)?,
        Command::Join { maxspeed_policy } => {
            let mut cfg = load_config(&cli)?;
            if let Some(policy) = maxspeed_policy {
                cfg.maxspeed_policy = *policy;
            }
            let load = pipeline::run_stage(Stage::LoadGraph, &cfg)?;
            let join = pipeline::run_stage(Stage::Join, &cfg)?;
            format!("{load}\n{join}")
        }
        Command::Cluster => pipeline::run_stage(Stage::Cluster, &load_config(&cli)?)?,
        Command::Freeflow => pipeline::run_stage(Stage::FreeFlow, &load_config(&cli)?)?,
        Command::Speeds {
            filter,
            normalize_freeflow,
        } => {
            let mut cfg = load_config(&cli)?;
            if let Some(filter) = filter {
                cfg.filter = *filter;
            }
            if let Some(normalize) = normalize_freeflow {
                cfg.normalize_freeflow = *normalize;
            }
            pipeline::run_stage(Stage::Speeds, &cfg)?
        }
        Command::Simulate { scenario } => {
            pipeline::run_simulate(&load_config(&cli)?, scenario)?
        }
        Command::Compare {
            a,
            b,
            hour_mean,
            group_by,
        } => pipeline::run_compare(&load_config(&cli)?, a, b, *hour_mean, *group_by)?,
        Command::Demo { out } => {
            let report = pipeline::run_demo(out, cli.seed.unwrap_or(0))?;
            print!("{}", report.render());
            if !report.all_pass() {
                bail!("demo checks failed");
            }
            return Ok(());
        }
    };
    println!("{summary}");
    Ok(())
}
