mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::Preset;

/// Angle-closure classification and scleral-spur localization for AS-OCT scans.
#[derive(Parser, Debug)]
#[command(name = "anglekit", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every random choice (overrides the `seed` config key).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core (overrides the `workers` config key).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set classifier.train.epochs=15`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Base settings the config file and overrides apply to.
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Full,
    Desk,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Full => Preset::Full,
            PresetArg::Desk => Preset::Desk,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalTask {
    Classification,
    Localization,
    All,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic wedge dataset (PNGs, manifest.csv, synth_config.json).
    Synth {
        /// Number of images (overrides `synth.count`).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Validate a dataset and write seeded train.csv / test.csv folds.
    Prepare {
        /// Manifest to split.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train the angle-closure classifier.
    TrainCls(TrainArgs),
    /// Train one stage of the scleral-spur localizer.
    TrainLoc {
        /// Stage to train.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// Stage-1 checkpoint whose predictions anchor stage-2 crops.
        #[arg(long)]
        stage1: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Run trained models over a manifest and write predictions.csv.
    Predict {
        /// Manifest of images to predict.
        #[arg(long)]
        manifest: PathBuf,
        /// Image directory (defaults to the manifest's directory).
        #[arg(long)]
        images: Option<PathBuf>,
        /// Classifier checkpoint.
        #[arg(long)]
        cls: Option<PathBuf>,
        /// Stage-1 localizer checkpoint.
        #[arg(long)]
        stage1: Option<PathBuf>,
        /// Stage-2 localizer checkpoint (needs --stage1).
        #[arg(long)]
        stage2: Option<PathBuf>,
    },
    /// Score predictions.csv against a manifest and write report files.
    Eval {
        /// Predictions file.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth manifest.
        #[arg(long)]
        gt: PathBuf,
        /// Which metrics to compute.
        #[arg(long, value_enum, default_value = "all")]
        task: EvalTask,
        /// Row label in the report tables.
        #[arg(long, default_value = "anglekit")]
        method: String,
        /// Localizer checkpoint whose encoder/PPM/loss flags label an ablation row.
        #[arg(long)]
        ablation: Option<PathBuf>,
    },
    /// Merge eval.json files from several eval runs into one report.
    Report {
        /// Eval output directories.
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training manifest (overrides `data.train`).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Selection manifest (overrides `data.val`).
    #[arg(long)]
    val: Option<PathBuf>,
    /// Image directory (overrides `data.images`).
    #[arg(long)]
    images: Option<PathBuf>,
    /// Continue from a `last.ckpt` written by an interrupted run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
