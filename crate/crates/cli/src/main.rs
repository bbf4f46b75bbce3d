use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use surgt_annotate::{EpipolarMode, ServiceConfig};
use surgt_cli::{default_jobs, CliError, ConfigArgs, EvaluateArgs};
use surgt_core::synth::SubsetSpec;

/// Stereo tracker benchmark.
#[derive(Debug, Parser)]
#[command(name = "surgt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a tracker over a dataset and write predictions and a report.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// builtin:<oracle|null|static|ncc> or exec:<shell command>
        #[arg(long)]
        tracker: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Videos evaluated in parallel (default: logical cores).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        svg: bool,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        videos: usize,
        #[arg(long, default_value_t = 150)]
        frames: usize,
        #[arg(long, default_value_t = 2)]
        videos_per_case: usize,
    },
    /// Per-video descriptive statistics.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        /// Skip the template-similarity statistic (reads no images).
        #[arg(long)]
        no_ncc: bool,
    },
    /// Rescore one or more evaluation directories into a combined report.
    Report {
        /// Overrides the dataset recorded in each run.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: bool,
    },
    /// Serve the annotation API (and optionally a static frontend).
    AnnotateServe {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Reject off-line right clicks instead of snapping them.
        #[arg(long)]
        strict_epipolar: bool,
        #[arg(long, default_value_t = 2.5)]
        sphere_radius_mm: f64,
        #[arg(long, default_value_t = 10.0)]
        drift_threshold_px: f64,
    },
    /// Check every dataset invariant.
    ValidateDataset {
        #[arg(long)]
        dataset: PathBuf,
        /// Also rebuild each box from its keypoints and compare.
        #[arg(long)]
        rederive_bboxes: bool,
        #[arg(long, default_value_t = 1e-6)]
        tolerance_px: f64,
        /// Skip checking that every frame image exists.
        #[arg(long)]
        labels_only: bool,
    },
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    match cli.command {
        Command::Evaluate { dataset, tracker, out, config, jobs, svg } => surgt_cli::evaluate(&EvaluateArgs {
            dataset,
            tracker,
            out,
            config: config.resolve()?,
            jobs: jobs.unwrap_or_else(default_jobs),
            svg,
        }),
        Command::Synth { out, seed, videos, frames, videos_per_case } => {
            surgt_cli::synth(&out, &SubsetSpec { seed, videos, frame_count: frames, videos_per_case })
        }
        Command::Stats { dataset, no_ncc } => surgt_cli::stats(&dataset, !no_ncc),
        Command::Report { dataset, runs, out, svg } => surgt_cli::report(dataset.as_deref(), &runs, &out, svg),
        Command::AnnotateServe { root, addr, static_dir, strict_epipolar, sphere_radius_mm, drift_threshold_px } => {
            let config = ServiceConfig {
                sphere_radius_mm,
                drift_threshold_px,
                epipolar_mode: if strict_epipolar { EpipolarMode::Reject } else { EpipolarMode::Snap },
                ..ServiceConfig::default()
            };
            surgt_cli::annotate_serve(root, addr, static_dir, config)
        }
        Command::ValidateDataset { dataset, rederive_bboxes, tolerance_px, labels_only } => {
            surgt_cli::validate_dataset(&dataset, rederive_bboxes, tolerance_px, !labels_only)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(serde_json::Value::Null) => ExitCode::SUCCESS,
        Ok(out) => {
            // A closed pipe (`surgt stats | head`) is not an error.
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&out).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
