use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use griffin::sim::Method;
use griffin::GriffinError;

mod analyze;
mod bench;
mod out;
mod planted;
mod prune;
mod simulate;

pub const DEFAULT_SEED: u64 = 20240214;

#[derive(Parser, Debug)]
#[command(name = "griffin", version, about = "Per-prompt feedforward neuron selection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Heatmaps, Jaccard overlap and sorted profiles of relative activations.
    Analyze(AnalyzeArgs),
    /// Generation-partition perplexity over a method x sparsity grid.
    Simulate(SimulateArgs),
    /// Generation-phase latency of full vs pruned blocks.
    Bench(BenchArgs),
    /// Export a pruned (or masked) model selected from a prompt.
    Prune(PruneArgs),
    /// Write a planted-expert model and matching token sequences.
    GenPlanted(GenPlantedArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Control {
    None,
    #[value(alias = "permuted")]
    Permute,
    Random,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub tokens: PathBuf,
    /// Top-k sizes for the Jaccard report [default: powers of two up to D_FF].
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Control::None)]
    pub control: Control,
    /// Heatmap window as TOKENS,FEATURES; clipped to the data.
    #[arg(long, value_parser = parse_pair, default_value = "512,512")]
    pub window: (usize, usize),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub tokens: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub sparsity: Vec<f64>,
    /// Methods to evaluate [default: all].
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub method: Vec<Method>,
    /// Prompt and generation lengths as P,G [default: half of the shortest sequence each].
    #[arg(long, value_parser = parse_pair)]
    pub partition: Option<(usize, usize)>,
    /// Share experts across B consecutive sequences (or "global"); GRIFFIN only.
    #[arg(long, value_parser = parse_batch)]
    pub batch: Option<BatchArg>,
    /// Re-select experts every N generated positions.
    #[arg(long)]
    pub reselect_every: Option<usize>,
    /// Leave the down projection dense under Wanda.
    #[arg(long)]
    pub wanda_skip_w2: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Benchmark the first layer of this model instead of a random block.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_parser = parse_pair, default_value = "2048,128")]
    pub partition: (usize, usize),
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.75")]
    pub sparsity: Vec<f64>,
    #[arg(long, default_value_t = 4096)]
    pub dim: usize,
    #[arg(long, default_value_t = 11008)]
    pub d_ff: usize,
    #[arg(long)]
    pub glu: bool,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct PruneArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    /// Prompt tokens; several lines are treated as one batch.
    #[arg(long)]
    pub tokens: PathBuf,
    #[arg(long, value_parser = parse_method, default_value = "griffin")]
    pub method: Method,
    #[arg(long, default_value_t = 0.5)]
    pub sparsity: f64,
    #[arg(long)]
    pub wanda_skip_w2: bool,
}

#[derive(Args, Debug)]
pub struct GenPlantedArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 8)]
    pub clusters: usize,
    #[arg(long, default_value_t = 8)]
    pub experts: usize,
    #[arg(long, default_value_t = 10.0)]
    pub dominance: f64,
    #[arg(long, default_value_t = 256)]
    pub vocab: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 64)]
    pub d_ff: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Number of token sequences, assigned to clusters round-robin.
    #[arg(long, default_value_t = 16)]
    pub sequences: usize,
    #[arg(long, default_value_t = 129)]
    pub seq_len: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum BatchArg {
    Size(usize),
    Global,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected A,B, got '{s}'"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("'{v}': {e}"));
    Ok((p(a)?, p(b)?))
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: GriffinError| e.to_string())
}

fn parse_batch(s: &str) -> Result<BatchArg, String> {
    if s == "global" {
        return Ok(BatchArg::Global);
    }
    match s.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("batch must be a positive integer or 'global', got '{s}'")),
        Ok(b) => Ok(BatchArg::Size(b)),
    }
}

fn exit_code(err: &GriffinError) -> u8 {
    if err.is_data_format() || matches!(err, GriffinError::Io(_)) {
        3
    } else if err.is_numeric() {
        4
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => analyze::run(&a),
        Command::Simulate(a) => simulate::run(&a),
        Command::Bench(a) => bench::run(&a),
        Command::Prune(a) => prune::run(&a),
        Command::GenPlanted(a) => planted::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
