//! Command-line front end: architecture summary, cost analysis, gradient
//! checks, toy data generation, training, evaluation, prediction and
//! latency benchmarks.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use linknet_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "linknet",
    version,
    about = "Encoder-decoder segmentation network toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-block input/output shapes and parameter totals.
    Summary(SummaryArgs),
    /// Parameters, MACs, FLOPs and model size.
    Cost(CostArgs),
    /// Finite-difference gradient checks of every primitive and the whole model.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic shapes dataset directory.
    MakeToyData(MakeToyDataArgs),
    /// Train on a dataset directory, writing a checkpoint and an epoch log.
    Train(TrainArgs),
    /// Score a checkpoint (or a directory of label maps) against a dataset.
    Eval(EvalArgs),
    /// Write the argmax label map for one image tensor file.
    Predict(PredictArgs),
    /// Time inference-mode forward passes on random input.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SummaryArgs {
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    #[arg(long, default_value_t = 1024)]
    pub width: usize,
    #[arg(long)]
    pub no_bypass: bool,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    /// Rounded up to a multiple of 32 for the network; the cost at the
    /// exact size is also printed, scaled by area.
    #[arg(long, default_value_t = 360)]
    pub height: usize,
    #[arg(long, default_value_t = 640)]
    pub width: usize,
    #[arg(long)]
    pub no_bypass: bool,
    /// Print the per-node table.
    #[arg(long)]
    pub nodes: bool,
    /// Tab-separated records instead of the human-readable report.
    #[arg(long)]
    pub records: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

#[derive(Debug, Args)]
pub struct MakeToyDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch log; defaults to the checkpoint path with a `.log` extension.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Defaults to the largest label in the dataset plus one.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_bypass: bool,
    #[arg(long)]
    pub no_class_weights: bool,
    /// Divide every layer width by this factor.
    #[arg(long, default_value_t = 1)]
    pub width_divisor: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "predictions")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Score int32 label maps `NNNN.ltn` from this directory instead of
    /// running a model.
    #[arg(long, conflicts_with = "checkpoint")]
    pub predictions: Option<PathBuf>,
    /// Class count when scoring `--predictions`; defaults to the largest
    /// label plus one.
    #[arg(long, requires = "predictions")]
    pub classes: Option<usize>,
    /// Tab-separated records instead of the table.
    #[arg(long)]
    pub records: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// real32 image tensor `[C, H, W]` or `[1, C, H, W]`.
    #[arg(long)]
    pub input: PathBuf,
    /// int32 label map `[H, W]` to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Defaults to 320, 360 and 720 paired with the default widths.
    #[arg(long, requires = "width")]
    pub height: Option<usize>,
    #[arg(long, requires = "height")]
    pub width: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    #[arg(long, default_value_t = 1)]
    pub width_divisor: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    EXIT_USAGE
                }
            };
        }
    };
    match commands::execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_USAGE
    } else {
        EXIT_FAILURE
    }
}
