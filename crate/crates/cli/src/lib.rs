//! `harlstm` command-line front end.
//!
//! Subcommands: `synth`, `train`, `loso-grid`, `analyze`, `bench` and
//! `show-config`. Settings come from defaults, then an optional TOML file
//! (`--config`), then flags.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use harlstm::{Error, ErrorKind, Result};

pub use config::{ExperimentConfig, Preset, ReportFormat, ResolvedConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_PROTOCOL: i32 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "harlstm",
    version,
    about = "DeepConvLSTM activity recognition experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as CSV.
    Synth(SynthArgs),
    /// Train one model with a held-out subject.
    Train(TrainArgs),
    /// Leave-one-subject-out grid over hidden sizes, layer counts and seeds.
    LosoGrid(GridArgs),
    /// Closed-form LSTM parameter counts.
    Analyze(AnalyzeArgs),
    /// 1-layer vs 2-layer epoch timing.
    Bench(BenchArgs),
    /// Print the resolved configuration.
    ShowConfig(Common),
}

/// Flags shared by the config-driven commands.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "HARLSTM_OUT")]
    pub out: Option<PathBuf>,
    /// Single run seed; replaces the seed list.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Vec<usize>,
    #[arg(long = "lstm-layers", value_delimiter = ',')]
    pub lstm_layers: Vec<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub format: Vec<ReportFormat>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub window_seconds: Option<f64>,
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// CSV dataset; replaces the configured source.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub hz: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Seconds per subject.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Subject id held out for validation.
    #[arg(long)]
    pub holdout: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub common: Common,
    /// Reuse finished cells from an interrupted run with the same config.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// LSTM input extents.
    #[arg(long = "s", value_delimiter = ',', default_values_t = [64usize])]
    pub s: Vec<usize>,
    /// Hidden sizes.
    #[arg(long = "h", value_delimiter = ',', default_values_t = [128usize, 256, 512, 1024])]
    pub h: Vec<usize>,
    /// Also write `cost_model.csv` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub batches: Option<usize>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        ErrorKind::Config => EXIT_CONFIG,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Divergence => EXIT_DIVERGENCE,
        ErrorKind::Protocol => EXIT_PROTOCOL,
        ErrorKind::Other => EXIT_OTHER,
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::LosoGrid(a) => commands::loso_grid(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::ShowConfig(c) => commands::show_config(&c),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
