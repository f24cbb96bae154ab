//! Command-line front end for the video depth pipeline.
//!
//! Exit codes: 0 on success, 2 for usage or configuration problems, 3 for
//! missing or malformed data, 4 for numeric failures during computation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use viddepth_core::error::Error;

use config::CliConfig;

#[derive(Parser)]
#[command(name = "viddepth", version, about = "Video-to-depth diffusion pipeline")]
struct Cli {
    /// Configuration file; defaults apply for anything not set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; every command is deterministic given this value.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for data generation and caching (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic training corpus and held-out eval suite.
    GenData {
        /// Output directory (default: the configured data_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Which part to build: all, realistic, synthetic, or eval.
        #[arg(long, default_value = "all")]
        style: String,
    },
    /// Train the denoiser through the three-stage schedule.
    Train {
        /// Stage range to run, e.g. `2` or `1-3`. Starting past 1 resumes
        /// from the previous stage's checkpoint.
        #[arg(long, default_value = "1-3")]
        stages: String,
    },
    /// Predict depth for one video tensor file.
    Infer {
        /// Input video tensor ([T,H,W,3], values in [0,1]).
        #[arg(long)]
        video: PathBuf,
        /// Output depth tensor path.
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint directory (default: run_dir/train/stage3).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Override the configured sampler step count.
        #[arg(long)]
        steps: Option<usize>,
        /// Segment-merge strategy: full, anchored_init, or baseline.
        #[arg(long, default_value = "full")]
        variant: String,
    },
    /// Score predicted depth against ground truth.
    Eval {
        /// Directory of `{id}.dcrf` predictions.
        #[arg(long)]
        pred_dir: PathBuf,
        /// Directory of ground truth, flat `{id}.dcrf` files or
        /// `{id}/depth_metric.dcrf` subdirectories.
        #[arg(long)]
        gt_dir: PathBuf,
        /// Report directory (default: run_dir/eval).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a space-time profile image of this row per sequence.
        #[arg(long)]
        profile_row: Option<usize>,
    },
    /// Compare segment-merge strategies on a suite of long videos.
    AblateStitch {
        /// Suite directory of `{id}/video.dcrf` sequences
        /// (default: data_dir/eval).
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Output directory (default: run_dir/ablate).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Checkpoint directory (default: run_dir/train/stage3).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Run a single variant instead of all three.
        #[arg(long)]
        variant: Option<String>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. }
        | Error::Format { .. }
        | Error::Truncated { .. }
        | Error::DimOverflow { .. }
        | Error::Corpus(_)
        | Error::Data(_)
        | Error::Scene(_)
        | Error::Shape(_) => 3,
        Error::Domain(_)
        | Error::Degenerate(_)
        | Error::Training(_)
        | Error::Inference(_)
        | Error::Params(_)
        | Error::Conditioning(_) => 4,
    }
}

fn run(cli: &Cli) -> viddepth_core::error::Result<()> {
    let cfg = CliConfig::load(cli.config.as_deref())?;
    let seed = cli.seed;
    match &cli.command {
        Command::GenData { out, style } => {
            commands::cmd_gen_data(&cfg, seed, out.as_deref(), style)
        }
        Command::Train { stages } => commands::cmd_train(&cfg, seed, stages),
        Command::Infer {
            video,
            out,
            checkpoint,
            steps,
            variant,
        } => commands::cmd_infer(&cfg, seed, video, out, checkpoint.as_deref(), *steps, variant),
        Command::Eval {
            pred_dir,
            gt_dir,
            out,
            profile_row,
        } => commands::cmd_eval(&cfg, seed, pred_dir, gt_dir, out.as_deref(), *profile_row),
        Command::AblateStitch {
            suite,
            out,
            checkpoint,
            variant,
        } => commands::cmd_ablate_stitch(
            &cfg,
            seed,
            suite.as_deref(),
            out.as_deref(),
            checkpoint.as_deref(),
            variant.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // A second build_global in the same process is a no-op; that only
        // happens under test harnesses, so the result can be ignored.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
