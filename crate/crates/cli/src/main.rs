//! `mpt`: train, fine-tune, analyze and benchmark multi-prize tickets.
//!
//! Exit codes: 0 success, 2 invalid flags, 3 unreadable or mismatched data,
//! 4 training abort, 5 dense/sparse disagreement, 1 anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use mpt_core::nn::Arch;
use mpt_core::trainer::{FinetuneScope, LrSchedule, OptimizerKind};
use mpt_core::Error;

#[derive(Parser)]
#[command(name = "mpt", version, about = "Multi-prize ticket training, sparsity analysis and sparse inference")]
struct Cli {
    /// File of `key=value` flag settings; flags on the command line win
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train pruning scores over frozen binary weights
    Train(TrainArgs),
    /// Fine-tune the kept weights of a checkpoint, or run the hyperparameter grid
    Finetune(FinetuneArgs),
    /// Kernel sparsity report and score histograms of a checkpoint
    Analyze(AnalyzeArgs),
    /// Test accuracy through the dense and kernel-skipping paths
    Infer(InferArgs),
    /// Time sort-based against threshold-based mask selection
    BenchSelect(BenchSelectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DatasetKind {
    Synthetic,
    Cifar10,
    Idx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SelectKind {
    Topk,
    Threshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ScopeKind {
    Global,
    Layer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum InferMode {
    Dense,
    Sparse,
    Both,
}

#[derive(Args, Clone, Debug)]
struct DataArgs {
    #[arg(long, value_enum, default_value_t = DatasetKind::Synthetic)]
    dataset: DatasetKind,
    /// Directory holding the CIFAR-10 binary batches or the IDX files
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Training samples to use (synthetic default 2048, otherwise all)
    #[arg(long)]
    train_size: Option<usize>,
    /// Test samples to use (synthetic default 512, otherwise all)
    #[arg(long)]
    test_size: Option<usize>,
    /// Synthetic classes (default 10, or the checkpoint's)
    #[arg(long)]
    classes: Option<usize>,
    /// Synthetic image side (default 32, or the checkpoint's)
    #[arg(long)]
    image_size: Option<usize>,
    /// Synthetic channels (default 3, or the checkpoint's)
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value = "conv4")]
    arch: Arch,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.5)]
    prune_ratio: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = SelectKind::Topk)]
    select: SelectKind,
    /// Keep scores strictly above this value (threshold selection)
    #[arg(long)]
    theta: Option<f64>,
    /// Set theta so it prunes --prune-ratio of the initial scores
    #[arg(long)]
    calibrate_theta: bool,
    #[arg(long, value_enum, default_value_t = ScopeKind::Global)]
    scope: ScopeKind,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value = "sgd")]
    optimizer: OptimizerKind,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value = "cosine")]
    lr_schedule: LrSchedule,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the raw scores directly instead of the power map (requires --alpha 1)
    #[arg(long)]
    no_powerprop: bool,
    /// Shared uniform bound for the initial scores of every layer
    #[arg(long)]
    score_bound: Option<f64>,
    #[arg(long, value_name = "CKPT")]
    out: PathBuf,
    #[arg(long, value_name = "CSV")]
    metrics: PathBuf,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[arg(long, value_name = "CKPT")]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "last")]
    scope: FinetuneScope,
    #[arg(long, default_value = "sgd")]
    optimizer: OptimizerKind,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value = "cosine")]
    lr_schedule: LrSchedule,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "CKPT", required_unless_present = "grid")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "CSV", required_unless_present = "grid")]
    metrics: Option<PathBuf>,
    /// Run every optimizer, schedule, learning rate, batch size and scope
    #[arg(long, conflicts_with_all = ["out", "metrics"])]
    grid: bool,
    /// Where grid mode writes grid_results.csv and grid_best.txt
    #[arg(long, value_name = "DIR", default_value = ".")]
    grid_dir: PathBuf,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long, value_name = "CKPT")]
    ckpt: PathBuf,
    #[arg(long, value_name = "JSON")]
    report: PathBuf,
    #[arg(long, value_name = "DIR")]
    hist_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    bins: usize,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long, value_name = "CKPT")]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = InferMode::Both)]
    mode: InferMode,
    /// Time dense against sparse inference
    #[arg(long)]
    bench: bool,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Test images per timed forward pass
    #[arg(long, default_value_t = 8)]
    bench_batch: usize,
    /// Write the benchmark JSON here (implies --bench)
    #[arg(long, value_name = "JSON")]
    bench_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchSelectArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000000,10000000")]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
}

/// A failed run and its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Abort(String),
    Mismatch(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Abort(_) => 4,
            Failure::Mismatch(_) => 5,
            Failure::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Abort(m) | Failure::Mismatch(m) | Failure::Other(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) => Failure::Usage(msg),
            Error::Diverged { .. } | Error::LayerFullyPruned { .. } => Failure::Abort(msg),
            Error::DegenerateLayer { .. } | Error::Empty(_) | Error::ShapeMismatch { .. } => Failure::Data(msg),
            e if e.is_data_error() => Failure::Data(msg),
            _ => Failure::Other(msg),
        }
    }
}

fn main() -> ExitCode {
    let args = match config::merge_config(std::env::args_os().collect()) {
        Ok(args) => args,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cli = Cli::from_arg_matches(&matches).expect("matches come from the same definition");
    let echo = matches
        .subcommand()
        .and_then(|(name, sub)| Cli::command().find_subcommand(name).map(|cmd| config::echo(cmd, sub)))
        .unwrap_or_default();
    let result = match cli.command {
        Command::Train(a) => commands::train(a, &echo),
        Command::Finetune(a) => commands::finetune(a, &echo),
        Command::Analyze(a) => commands::analyze(a, &echo),
        Command::Infer(a) => commands::infer(a, &echo),
        Command::BenchSelect(a) => commands::bench_select(a, &echo),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            if let Failure::Usage(_) = f {
                eprintln!("\nFor more information, try '--help'.");
            }
            ExitCode::from(f.code())
        }
    }
}
