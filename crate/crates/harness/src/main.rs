use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deformseg_harness::commands::{
    cmd_eval, cmd_recover, cmd_report, cmd_sample, cmd_sweep_edge, cmd_train, SampleInputs,
};
use deformseg_harness::config::parse_mode;
use deformseg_harness::{ExperimentConfig, HarnessError, Result};

/// Learned non-uniform downsampling experiments on synthetic scenes.
#[derive(Parser, Debug)]
#[command(name = "deformseg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (key = value lines, `#` comments).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Downsample one image with the configured sampler.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Image as a DTNS tensor (H×W×C, values in [0, 1]).
        #[arg(long)]
        image: PathBuf,
        /// Label map as binary PGM.
        #[arg(long)]
        label: Option<PathBuf>,
        /// Checkpoint stem (the path without `.bin` / `.manifest`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Bring a low-resolution prediction back to full resolution.
    Recover {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        classes: u32,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class IoU and recovery IoU against a ground-truth label.
    Eval {
        #[arg(long)]
        label: PathBuf,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        classes: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recovery IoU of the edge-simulated sampler over blur radii.
    SweepEdge {
        #[command(flatten)]
        common: Common,
    },
    /// Train the configured sampler and segmentation head.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// joint, single-loss, stage or stage-joint.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Aggregate finished runs into a trade-off table and plots.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Run directories (each with run.csv, or with run subdirectories).
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let cfg = ExperimentConfig::from_file(&common.config)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| HarnessError::Config("no output directory: pass --out or set `out`".into()))?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample { common, image, label, checkpoint } => {
            let (cfg, out) = load(&common)?;
            cmd_sample(&cfg, &SampleInputs { image, label, checkpoint }, &out)?;
        }
        Command::Recover { grid, pred, classes, height, width, out } => {
            cmd_recover(&grid, &pred, classes, height, width, &out)?;
        }
        Command::Eval { label, pred, grid, classes, out } => {
            let text = cmd_eval(&label, pred.as_deref(), grid.as_deref(), classes, &out)?;
            print!("{text}");
        }
        Command::SweepEdge { common } => {
            let (cfg, out) = load(&common)?;
            cmd_sweep_edge(&cfg, &out)?;
        }
        Command::Train { common, seed, mode } => {
            let (cfg, out) = load(&common)?;
            let mode = mode.as_deref().map(parse_mode).transpose()?;
            for r in cmd_train(&cfg, seed, mode, &out)? {
                let miou = r.eval.iou.mean.map_or("NA".into(), |v| format!("{v:.4}"));
                println!(
                    "{}x{} seed {}: val mIoU {miou} ({:.1}s)",
                    r.size.0, r.size.1, r.seed, r.seconds
                );
            }
        }
        Command::Report { out, runs } => {
            cmd_report(&runs, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
