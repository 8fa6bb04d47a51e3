//! Command-line arguments. Every command's arguments double as its
//! serializable run configuration.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use reciprocal::train::Alternation;

#[derive(Debug, Parser)]
#[command(name = "recip", version, about = "Reciprocal forward/backward trajectory prediction")]
pub struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic social-force dataset.
    Generate(GenerateArgs),
    /// Convert ETH/UCY text files into a dataset.
    Ingest(IngestArgs),
    /// Train a forward/backward pair.
    Train(TrainArgs),
    /// Best-of-K evaluation of a trained forward network.
    Eval(EvalArgs),
    /// Compare single-sample predictions with and without the reciprocal attack.
    AttackEval(AttackEvalArgs),
    /// Re-run a command from its resolved_config.json.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// Scenes per subset.
    #[arg(long, default_value_t = 500)]
    pub scenes: usize,
    #[arg(long, default_value_t = 4)]
    pub agents: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of each subset's scenes held out for testing.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Number of sub-datasets; more than one enables leave-one-out.
    #[arg(long, default_value_t = 1)]
    pub subsets: usize,
    /// Start-circle diameter of the first subset, in meters.
    #[arg(long, default_value_t = 8.0)]
    pub arena_size: f64,
    #[arg(long, default_value = "runs/data")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    /// ETH/UCY files (`frame agent x y` per line); each becomes one subset.
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Trailing fraction of each file's windows held out for testing.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value = "runs/data")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Joint training with the reciprocal losses.
    Reciprocal,
    /// Both networks trained independently (`lambda = 1`).
    Baseline,
    /// Independent training without social pooling or adversarial loss.
    Lstm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlternationArg {
    PerBatch,
    PerEpoch,
}

impl From<AlternationArg> for Alternation {
    fn from(a: AlternationArg) -> Self {
        match a {
            AlternationArg::PerBatch => Alternation::PerBatch,
            AlternationArg::PerEpoch => Alternation::PerEpoch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Reciprocal)]
    pub mode: Mode,
    /// Weight of the direct loss; only meaningful in reciprocal mode.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Leading epochs trained independently before the joint loop.
    #[arg(long, default_value_t = 20)]
    pub pretrain_epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Adversarial loss weight (forced to 0 in lstm mode).
    #[arg(long, default_value_t = 1.0)]
    pub gan_weight: f64,
    #[arg(long, value_enum, default_value_t = AlternationArg::PerBatch)]
    pub alternation: AlternationArg,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 10.0)]
    pub clip_norm: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Subset excluded from training.
    #[arg(long, conflicts_with = "leave_one_out")]
    pub holdout: Option<String>,
    /// Train one pair per subset, each with that subset held out.
    #[arg(long)]
    pub leave_one_out: bool,
    /// Continue from a checkpoint written by an earlier, interrupted run.
    #[arg(long, conflicts_with = "leave_one_out")]
    pub resume: Option<PathBuf>,
    /// Stop (and checkpoint) after this many completed epochs.
    #[arg(long)]
    pub stop_after: Option<usize>,
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Checkpoint file, or with --leave-one-out the directory of per-subset runs.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Test subset; defaults to the test splits of every subset.
    #[arg(long, conflicts_with = "leave_one_out")]
    pub subset: Option<String>,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also report the linear extrapolation baseline.
    #[arg(long)]
    pub linear: bool,
    /// Evaluate each subset with the model trained without it.
    #[arg(long)]
    pub leave_one_out: bool,
    /// Number of scenes to draw as SVG plots.
    #[arg(long, default_value_t = 0)]
    pub plots: usize,
    #[arg(long, default_value = "runs/eval")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct AttackEvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub subset: Option<String>,
    #[arg(long, default_value_t = 20)]
    pub iterations: usize,
    #[arg(long, default_value_t = -0.05, allow_negative_numbers = true)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub plots: usize,
    #[arg(long, default_value = "runs/attack")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A resolved_config.json written by an earlier run.
    pub config: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Ingest(_) => "ingest",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::AttackEval(_) => "attack-eval",
            Command::Replay(_) => "replay",
        }
    }

    pub fn out_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            Command::Generate(a) => Some(&mut a.out),
            Command::Ingest(a) => Some(&mut a.out),
            Command::Train(a) => Some(&mut a.out),
            Command::Eval(a) => Some(&mut a.out),
            Command::AttackEval(a) => Some(&mut a.out),
            Command::Replay(_) => None,
        }
    }
}
