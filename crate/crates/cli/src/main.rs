//! `wispike` — dataset synthesis, training, evaluation, and telemetry
//! reporting for the spiking CSI recognizer, one subcommand per task.
//!
//! Exit codes: 0 on success (including `--help`), 1 on usage errors, 2 on
//! data/numerics/runtime errors. Runtime errors print one line to stderr
//! prefixed with `error:`.

mod cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "wispike",
    version,
    about = "Spiking-network toolkit for WiFi-CSI human action recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic CSI benchmark
    Synth(SynthArgs),
    /// Concatenate single-action recordings into one multi-action sample
    Compose(ComposeArgs),
    /// Train a model from a run config
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Export per-epoch, per-layer firing rates of a finished run
    Rates(RatesArgs),
    /// Count operations and estimate energy for a checkpoint
    Energy(EnergyArgs),
    /// Dump one layer's per-timestep feature map as CSV
    ExportFeatures(ExportFeaturesArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Atomic actions in the catalog (default: 4)
    #[arg(long, value_name = "N")]
    atoms: Option<u32>,
    /// Samples per composite class, train + test combined (default: 250)
    #[arg(long, value_name = "K")]
    per_class: Option<u32>,
    /// Actions per sample; classes are the ordered M-tuples (default: 1)
    #[arg(long, value_name = "M")]
    actions: Option<u32>,
    /// Generator seed (default: WISPIKE_SEED, else 7)
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Output directory for the samples and manifest.csv
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Fraction of each class assigned to the train split (default: 0.8)
    #[arg(long, value_name = "F")]
    train_fraction: Option<f64>,
    /// Additive Gaussian noise sigma (default: 0.05)
    #[arg(long, value_name = "SIGMA")]
    noise_sigma: Option<f64>,
    /// Antenna channels C (default: 3)
    #[arg(long, value_name = "C")]
    channels: Option<usize>,
    /// Subcarriers per channel H (default: 8)
    #[arg(long, value_name = "H")]
    height: Option<usize>,
    /// Packets per second (default: 32)
    #[arg(long, value_name = "HZ")]
    sample_rate: Option<f64>,
    /// Seconds per atomic action (default: 1)
    #[arg(long, value_name = "SECS")]
    duration: Option<f64>,
}

#[derive(Args)]
struct ComposeArgs {
    /// Two or three .csit files, in action order
    #[arg(long, value_name = "FILE", num_args = 2..=3, required = true)]
    inputs: Vec<PathBuf>,
    /// Resample the concatenation to this packet width (default: keep full width)
    #[arg(long, value_name = "W")]
    width: Option<usize>,
    /// Output .csit path
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Catalog size N for composite class enumeration (default: class stays 0)
    #[arg(long, value_name = "N")]
    atom_count: Option<u32>,
}

#[derive(Args)]
#[command(after_help = "Config keys and defaults: seed 7, epochs 30, batch_size 32, \
learning_rate 0.01, beta1 0.9, beta2 0.999, epsilon 1e-8, loss.gamma1 1.0, \
loss.gamma2 0.1, loss.tau 0.07, loss.projection_dim 64, model.time_steps 4.\n\
Precedence: flag > config file > WISPIKE_SEED (seed only) > built-in default.")]
struct TrainArgs {
    /// Run config TOML
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Run directory; receives history.csv and checkpoint.wspk
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Resume from DIR/checkpoint.wspk
    #[arg(long)]
    resume: bool,
    /// Override the run seed (default: 7)
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Override the epoch count (default: 30)
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Override the batch size (default: 32)
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,
    /// Override the learning rate (default: 0.01)
    #[arg(long, value_name = "LR")]
    learning_rate: Option<f64>,
    /// Override the dataset manifest path
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Suppress per-epoch progress lines
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Dataset manifest (default: the one recorded in the checkpoint)
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Split to evaluate (default: test)
    #[arg(long, value_name = "SPLIT", value_parser = ["train", "test"])]
    split: Option<String>,
    /// Confusion matrix CSV path (default: confusion.csv)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RatesArgs {
    /// Run directory written by `train` (history.csv + checkpoint.wspk)
    #[arg(long, value_name = "DIR")]
    rundir: PathBuf,
    /// Output CSV path (default: stdout)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnergyArgs {
    /// Checkpoint file
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Dataset manifest (default: the one recorded in the checkpoint)
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Split to count over (default: test)
    #[arg(long, value_name = "SPLIT", value_parser = ["train", "test"])]
    split: Option<String>,
    /// Also print a comparison table against a dense CNN of the same topology
    #[arg(long)]
    baseline: bool,
    /// Charge the spiking network for accumulate operations only
    #[arg(long)]
    paper_convention: bool,
    /// Per-layer energy CSV path (default: stdout)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportFeaturesArgs {
    /// Checkpoint file
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Input .csit sample
    #[arg(long, value_name = "FILE")]
    sample: PathBuf,
    /// Layer to capture: index or name, e.g. 2 or layer02_temporal_attention
    #[arg(long, value_name = "LAYER")]
    layer: String,
    /// Output CSV path (default: stdout)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version go to stdout and succeed; anything else is a
            // usage error.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(args) => cmd::synth(args),
        Command::Compose(args) => cmd::compose(args),
        Command::Train(args) => cmd::train(args),
        Command::Eval(args) => cmd::eval(args),
        Command::Rates(args) => cmd::rates(args),
        Command::Energy(args) => cmd::energy(args),
        Command::ExportFeatures(args) => cmd::export_features(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
