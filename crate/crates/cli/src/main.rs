mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

/// Split convolutional networks into slim branches and analyze, verify,
/// train and search the results.
#[derive(Debug, Parser)]
#[command(name = "splitforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Apply a split plan to an architecture.
    Transform(TransformArgs),
    /// Parameter, MAC and peak-memory report.
    Analyze(AnalyzeArgs),
    /// Two-layer parameter counts over a (k1, k2) grid.
    Sweep(SweepArgs),
    /// Embedding equivalence and gradient checks on a split architecture.
    Verify(VerifyArgs),
    /// Train an architecture with plain SGD.
    Train(TrainArgs),
    /// Greedy block-by-block split search.
    Search(SearchArgs),
    /// Print a built-in architecture or accuracy table.
    Builtin(BuiltinArgs),
}

/// An architecture JSON file, or `builtin:<name>`.
type ArchSource = String;

#[derive(Debug, Args, Serialize)]
struct TransformArgs {
    arch: ArchSource,
    /// Split plan JSON file.
    #[arg(long, conflicts_with = "factors")]
    plan: Option<PathBuf>,
    /// Per-block factors for a proposed split, e.g. `8,2,2,4,4`.
    #[arg(long, value_delimiter = ',')]
    factors: Option<Vec<usize>>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ScheduleArg {
    AllParallel,
    BranchSequential,
}

#[derive(Debug, Args, Serialize)]
struct AnalyzeArgs {
    arch: ArchSource,
    /// Override the input shape, `C,H,W`.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    input_shape: Option<Vec<usize>>,
    /// Schedules to simulate (default: both).
    #[arg(long, value_enum, value_delimiter = ',')]
    schedule: Vec<ScheduleArg>,
    /// Also report memory in bytes at this element size.
    #[arg(long)]
    bytes_per_element: Option<usize>,
    /// Let concat write its inputs in place.
    #[arg(long)]
    concat_aliasing: bool,
    /// Per-layer CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Memory CSV output.
    #[arg(long)]
    memory_csv: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[arg(long = "l0", alias = "L0")]
    l0: usize,
    #[arg(long = "l1", alias = "L1")]
    l1: usize,
    #[arg(long = "l2", alias = "L2")]
    l2: usize,
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    factors: Vec<usize>,
    /// Grid CSV output.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct VerifyArgs {
    arch: ArchSource,
    /// Weights for the first trial; later trials draw random weights.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Random inputs per trial.
    #[arg(long, default_value_t = 4)]
    inputs: usize,
    /// Logit tolerance in 32-bit.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Logit tolerance in 64-bit.
    #[arg(long, default_value_t = 1e-10)]
    tol64: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weights checked by finite differences (0 skips the check).
    #[arg(long, default_value_t = 200)]
    grad_weights: usize,
    #[arg(long, default_value_t = 1e-4)]
    grad_tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    perturbation: f64,
    /// Minimum distance of ReLU inputs and max-pool gaps from a kink for
    /// the finite-difference input.
    #[arg(long, default_value_t = 1e-4)]
    kink_margin: f64,
    /// Input redraws allowed when searching for a kink-free input.
    #[arg(long, default_value_t = 256)]
    kink_attempts: usize,
    /// Corrupt one embedded weight on a live path (self-test).
    #[arg(long)]
    inject_fault: bool,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct DataArgs {
    /// `synth`, `cifar` (files under $SPLITFORGE_DATA_DIR) or `cifar:<path>`.
    #[arg(long, default_value = "synth")]
    dataset: String,
    /// Synthetic sample count.
    #[arg(long, default_value_t = 800)]
    samples: usize,
    /// Synthetic image side.
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Held-out fraction when no separate test file exists (0 disables).
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Cap on CIFAR records read.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct TrainFlags {
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long = "lr", default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    arch: ArchSource,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 3)]
    fine_tune_epochs: usize,
    /// Warm-start weights.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Weights output.
    #[arg(short, long)]
    out: PathBuf,
    /// History CSV (default `<out>.history.csv`).
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum PolicyArg {
    MaxWithinThreshold,
    FirstViolationRevert,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum BaselineArg {
    Remeasured,
    Global,
}

#[derive(Debug, Args, Serialize)]
struct SearchArgs {
    arch: ArchSource,
    /// Allowed accuracy drop in percentage points.
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "first-violation-revert")]
    policy: PolicyArg,
    #[arg(long, value_enum, default_value = "remeasured")]
    baseline_mode: BaselineArg,
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8")]
    ladder: Vec<usize>,
    /// `internal`, `table:<file>` or `external:<command>`.
    #[arg(long, default_value = "internal")]
    evaluator: String,
    /// External evaluator timeout in seconds.
    #[arg(long, default_value_t = 3600)]
    timeout: u64,
    #[arg(long, default_value_t = 3)]
    baseline_budget: usize,
    #[arg(long, default_value_t = 3)]
    candidate_budget: usize,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct BuiltinArgs {
    /// Architecture name, or `resnet18-table` for the reference accuracy table.
    name: String,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// A failed run: message for standard error plus the exit code of its class.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_TRANSFORM: u8 = 2;
pub const EXIT_ORACLE: u8 = 3;
pub const EXIT_EVALUATOR: u8 = 4;
pub const EXIT_DIVERGED: u8 = 5;

impl Failure {
    pub fn new(code: u8, message: impl std::fmt::Display) -> Self {
        Self { code, message: message.to_string() }
    }

    pub fn usage(message: impl std::fmt::Display) -> Self {
        Self::new(EXIT_USAGE, message)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Transform(a) => commands::transform(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Verify(a) => commands::verify(a),
        Command::Train(a) => commands::train(a),
        Command::Search(a) => commands::search(a),
        Command::Builtin(a) => commands::builtin(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
