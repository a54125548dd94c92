//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 a `--fail-below`
//! threshold was missed, 4 data error (malformed or mismatched files,
//! unsatisfiable generation), 5 I/O error, 1 any other failure.

mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

pub use commands::{ThresholdMiss, TRAIN_KEYS};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_THRESHOLD: u8 = 3;
pub const EXIT_DATA: u8 = 4;
pub const EXIT_IO: u8 = 5;

const EXIT_CODES: &str = "Exit codes: 0 ok, 2 usage/config error, 3 threshold missed, 4 data or hash error, 5 I/O error, 1 other failure.";

#[derive(Debug, Parser)]
#[command(name = "vislab", version, about = "Synthetic vision-language hallucination lab", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a world, caption corpus, fine-tuning split and probe sets.
    #[command(after_help = EXIT_CODES)]
    GenData(GenDataArgs),
    /// Train a model through one or more stages and write a checkpoint.
    #[command(after_help = EXIT_CODES)]
    Train(TrainArgs),
    /// Score a checkpoint on a probe file.
    #[command(after_help = EXIT_CODES)]
    Eval(EvalArgs),
    /// Dump attention, render heatmaps and write modality profiles.
    #[command(after_help = EXIT_CODES)]
    Attn(AttnArgs),
    /// Paired comparison of baseline and visalign checkpoints over seeds.
    #[command(after_help = EXIT_CODES)]
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Seed for the world, the corpus and every probe set.
    #[arg(long, default_value_t = 0)]
    pub world_seed: u64,
    /// Caption records in corpus.txt (stages 0 and 1).
    #[arg(long, default_value_t = 2000)]
    pub n_pretrain: usize,
    /// Records in each evaluation probe file.
    #[arg(long, default_value_t = 400)]
    pub n_probes: usize,
    /// Questions in train.txt (stage 2).
    #[arg(long, default_value_t = 2000)]
    pub n_train: usize,
    /// Evaluation flavors, comma separated: pope, mmvp_pairs, merlin_edit, qa.
    #[arg(long, default_value = "pope", value_delimiter = ',')]
    pub flavor: Vec<String>,
    /// Planted P(companion | anchor) for every prior pair.
    #[arg(long, default_value_t = 0.9)]
    pub confound_prob: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Fusion mode: baseline or visalign.
    #[arg(long, default_value = "baseline")]
    pub fusion: String,
    /// Stages to run: 0 (text-only), 1 (alignment), 2 (fine-tuning) or all.
    /// Without --init, stage 1 is preceded by stage 0; stage 2 needs --init.
    #[arg(long, default_value = "all")]
    pub stage: String,
    /// key = value file overriding default hyperparameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Training seed (initialization and data order).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Output checkpoint; the loss log goes next to it as <name>.loss.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Probe file; world.txt is read from the same directory unless --world is given.
    #[arg(long)]
    pub probes: PathBuf,
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Directory for report.csv and report.txt.
    #[arg(long)]
    pub report: PathBuf,
    /// METRIC=VALUE; exit 3 if the metric is below VALUE. Repeatable.
    #[arg(long)]
    pub fail_below: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub probes: PathBuf,
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Output directory for ATTN dumps (and heatmaps and profiles).
    #[arg(long)]
    pub dump: PathBuf,
    /// Number of leading probes to dump.
    #[arg(long, default_value_t = 4)]
    pub limit: usize,
    /// Render a head-mean heatmap per dumped probe and layer (PPM + SVG).
    #[arg(long)]
    pub heatmaps: bool,
    /// Write profile.csv and positions.csv over every probe.
    #[arg(long)]
    pub profile: bool,
    /// Query subset for profiles: text_after_visual or all.
    #[arg(long, default_value = "text_after_visual")]
    pub query_filter: String,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Baseline checkpoint; `{seed}` is replaced by 0..N-1.
    #[arg(long)]
    pub baseline_ckpt: String,
    /// Visalign checkpoint; `{seed}` is replaced by 0..N-1.
    #[arg(long)]
    pub visalign_ckpt: String,
    #[arg(long)]
    pub probes: PathBuf,
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Number of paired seeds.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Config(_) | Error::Parse { .. } | Error::Layout(_) | Error::Capacity { .. } => EXIT_USAGE,
        Error::HashMismatch(_)
        | Error::Data(_)
        | Error::Generation(_)
        | Error::Magic { .. }
        | Error::Version { .. }
        | Error::Truncated(_)
        | Error::Checksum { .. }
        | Error::TensorShape { .. } => EXIT_DATA,
        _ => EXIT_FAILURE,
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Attn(a) => commands::attn(&a),
        Command::Compare(a) => commands::compare(&a),
    };
    match result {
        Ok(None) => EXIT_OK,
        Ok(Some(miss)) => {
            eprintln!("{miss}");
            EXIT_THRESHOLD
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> ExitCode {
    ExitCode::from(run(Cli::parse()))
}
