//! `seqcloak`: the pipeline entry point wiring init → attack → render →
//! detect / ingest → eval → report.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seqcloak_core::texture_param::GarmentId;
use seqcloak_core::{Error, Result};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "seqcloak",
    version,
    about = "Sequence-level adversarial garment textures",
    propagate_version = true
)]
struct Cli {
    /// Master seed; overrides the config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread bound (default: all logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Run configuration, TOML or JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a locked palette and control points to a printed texture
    Init {
        /// Source texture PNG (UV space)
        #[arg(long)]
        texture: PathBuf,
        /// Printable-region mask PNG (nonzero = printable)
        #[arg(long)]
        mask: PathBuf,
        /// Which garment the texture maps onto: upper, lower or hat
        #[arg(long)]
        garment: GarmentId,
        /// Palette size
        #[arg(long, default_value_t = 4)]
        k: usize,
        /// Control points per palette color
        #[arg(long, default_value_t = 10)]
        p_max: usize,
        /// Ink limit (sum of CMYK-like coverage) for the locked palette
        #[arg(long, default_value_t = 3.0)]
        ink_limit: f64,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize garment textures against the detector over sampled scenes
    Attack {
        /// Parameter JSON, one per garment (from init or a previous run)
        #[arg(long)]
        params: Vec<PathBuf>,
        /// Override the configured epoch count
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from the checkpoint already in --out
        #[arg(long)]
        resume: bool,
        /// Run directory (checkpoints, history, manifest)
        #[arg(long)]
        out: PathBuf,
    },
    /// Render held-out evaluation videos to PNG frames
    Render {
        #[arg(long, required = true)]
        params: Vec<PathBuf>,
        /// Optional gains.json from an attack run
        #[arg(long)]
        gains: Option<PathBuf>,
        /// Number of videos (default: eval_videos from config)
        #[arg(long)]
        videos: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the toy detector over rendered frames
    Detect {
        /// Directory of video subdirectories produced by render
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate an external detection log and write it back normalized
    Ingest {
        /// Detection log (JSONL, one frame per line)
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute sequence metrics over a detection log and write a report
    Eval {
        #[arg(long)]
        log: PathBuf,
        /// Confidence threshold override
        #[arg(long)]
        tau: Option<f64>,
        /// IoU gate override
        #[arg(long)]
        tau_iou: Option<f64>,
        /// CVaR tail fraction override
        #[arg(long)]
        alpha: Option<f64>,
        /// NDR mode override: max-threshold or per-frame-failure
        #[arg(long)]
        ndr_mode: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare several evaluation reports side by side
    Report {
        /// Evaluation output directory (repeatable)
        #[arg(long, required = true)]
        run: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the detector contrast gain on unattacked renders
    CalibrateDetector {
        #[arg(long, required = true)]
        params: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(cli.seed, cli.jobs);
    cfg.validate()?;
    if let Some(jobs) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }

    match cli.command {
        Cmd::Init { texture, mask, garment, k, p_max, ink_limit, out } => {
            commands::cmd_init(&cfg, &texture, &mask, garment, k, p_max, ink_limit, &out)
        }
        Cmd::Attack { params, epochs, resume, out } => {
            commands::cmd_attack(cfg, &params, epochs, resume, &out)
        }
        Cmd::Render { params, gains, videos, out } => {
            commands::cmd_render(&cfg, &params, gains.as_deref(), videos, &out)
        }
        Cmd::Detect { frames, out } => commands::cmd_detect(&cfg, &frames, &out),
        Cmd::Ingest { log, out } => commands::cmd_ingest(&cfg, &log, &out),
        Cmd::Eval { log, tau, tau_iou, alpha, ndr_mode, out } => {
            commands::cmd_eval(cfg, &log, tau, tau_iou, alpha, ndr_mode.as_deref(), &out)
        }
        Cmd::Report { run, out } => commands::cmd_report(&cfg, &run, &out),
        Cmd::CalibrateDetector { params, out } => commands::cmd_calibrate(&cfg, &params, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 3 })
        }
    }
}
