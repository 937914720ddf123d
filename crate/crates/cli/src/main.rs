//! `uhrnet`: generate, ingest and split datasets, train, evaluate, predict,
//! plot and run the variant ablation.
//!
//! Exit codes: 0 on success, 1 for usage or config errors, 2 for runtime
//! failures such as missing files or shape mismatches.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::UsageError;

#[derive(Parser, Debug)]
#[command(name = "uhrnet", version, about = "Single-shot fringe-to-height network toolkit")]
struct Cli {
    /// Base directory for relative dataset paths.
    #[arg(long, global = true, env = "UHRNET_DATA_ROOT")]
    data_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    Gen(GenArgs),
    /// Convert an external dataset directory into a manifest.
    Ingest(IngestArgs),
    /// Assign train/val/test splits in a manifest.
    Split(SplitArgs),
    /// Train a network from a config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Predict a height map from one fringe image.
    Predict(PredictArgs),
    /// Render plots from stored results.
    Plot(PlotArgs),
    /// Train variants A-D with a shared budget and compare them.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Synthesis config (TOML or JSON); overrides `--canvas`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Desk-scale canvas `ROWSxCOLS`, e.g. `64x64`.
    #[arg(long)]
    canvas: Option<String>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "native")]
    adapter: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Dataset directory holding `manifest.json`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    train: f64,
    #[arg(long, default_value_t = 0.1)]
    val: f64,
    #[arg(long, default_value_t = 0.1)]
    test: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    allow_degenerate: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Directory for the report and plots.
    #[arg(long)]
    out: PathBuf,
    /// Row used for the cross-section plot; defaults to the middle row.
    #[arg(long)]
    row: Option<usize>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    fringe: PathBuf,
    /// Output PFM file (millimetres).
    #[arg(long)]
    out: PathBuf,
    /// Also write a middle-row cross-section SVG here.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[command(subcommand)]
    kind: PlotKind,
}

#[derive(Subcommand, Debug)]
enum PlotKind {
    /// RMSE, SSIM and loss curves from a `history.json`.
    History {
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prediction against ground truth along one row.
    CrossSection {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        row: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Absolute error image inside the mask.
    ErrorMap {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Error (mm) mapped to full red.
        #[arg(long, default_value_t = 1.0)]
        max_error: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Shared training budget; its network section is replaced per variant.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Divide every variant's channel widths by this.
    #[arg(long, default_value_t = 1)]
    width_divisor: usize,
    #[arg(long, default_value = "A,B,C,D")]
    variants: String,
    #[arg(long)]
    seed: Option<u64>,
}

fn resolve(root: Option<&Path>, p: &Path) -> PathBuf {
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p.to_path_buf(),
    }
}

fn run(cli: Cli) -> anyhow::Result<Vec<PathBuf>> {
    let root = cli.data_root.as_deref();
    match cli.command {
        Command::Gen(a) => commands::gen(&resolve(root, &a.out), a.count, a.seed, a.config.as_deref(), a.canvas.as_deref()),
        Command::Ingest(a) => commands::ingest(&resolve(root, &a.input), &a.adapter, &resolve(root, &a.out)),
        Command::Split(a) => commands::split(&resolve(root, &a.data), (a.train, a.val, a.test), a.seed, a.allow_degenerate),
        Command::Train(a) => commands::train(a.config.as_deref(), &resolve(root, &a.data), &a.out, a.seed),
        Command::Eval(a) => commands::eval(&a.checkpoint, &resolve(root, &a.data), &a.split, &a.out, a.row),
        Command::Predict(a) => commands::predict(&a.checkpoint, &a.fringe, &a.out, a.plot.as_deref()),
        Command::Plot(a) => match a.kind {
            PlotKind::History { history, out } => commands::plot_history(&history, &out),
            PlotKind::CrossSection { pred, gt, row, out } => commands::plot_cross_section(&pred, &gt, row, &out),
            PlotKind::ErrorMap {
                pred,
                gt,
                mask,
                max_error,
                out,
            } => commands::plot_error_map(&pred, &gt, &mask, max_error, &out),
        },
        Command::Ablate(a) => commands::ablate(
            &resolve(root, &a.data),
            a.config.as_deref(),
            &a.out,
            a.width_divisor,
            &a.variants,
            a.seed,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(artifacts) => {
            for p in artifacts {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
