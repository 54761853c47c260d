//! `eqgnn`: graph building, partitioning, serial and multi-rank forward and
//! training, tiling, synthetic data and the message-throughput benchmark.

mod bench;
mod commands;
mod config;
mod launch;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Overrides;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(eqgnn::Error),
    /// A rank process of a tcp launch failed with this exit code.
    Child(u8),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Data(e) => write!(f, "{e}"),
            CliError::Child(code) => write!(f, "a rank exited with code {code}"),
        }
    }
}

impl From<eqgnn::Error> for CliError {
    fn from(e: eqgnn::Error) -> Self {
        CliError::Data(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(eqgnn::Error::Divergence(_) | eqgnn::Error::ParamDivergence(_)) => 4,
            CliError::Data(_) => 3,
            CliError::Child(c) => *c,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "eqgnn", version, about = "Distributed equivariant GNN for block-sparse Hamiltonians")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    #[arg(long, default_value_t = 1)]
    pub nx: usize,
    #[arg(long, default_value_t = 1)]
    pub ny: usize,
    #[arg(long, default_value_t = 1)]
    pub nz: usize,
    /// Output file; defaults to `<out_dir>/tiled.xyz`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated batch sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 4, 16, 64, 256, 1024, 4096, 16384])]
    pub batches: Vec<usize>,
    /// Timed repeats per batch size; the median is reported.
    #[arg(long, default_value_t = 120)]
    pub repeats: usize,
    #[arg(long, default_value_t = 20)]
    pub warmup: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    pub nx: usize,
    #[arg(long, default_value_t = 5)]
    pub ny: usize,
    #[arg(long, default_value_t = 2)]
    pub nz: usize,
    /// Lattice constant (Å).
    #[arg(long, default_value_t = 2.0)]
    pub spacing: f64,
    /// Random displacement amplitude per coordinate (Å).
    #[arg(long, default_value_t = 0.15)]
    pub jitter: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the radius graph and write its edge list.
    BuildGraph(#[command(flatten)] Overrides),
    /// Repeat a periodic structure along its lattice vectors.
    Tile {
        #[command(flatten)]
        common: Overrides,
        #[command(flatten)]
        tile: TileArgs,
    },
    /// Partition the graph and write assignment, metrics and topology.
    Partition(#[command(flatten)] Overrides),
    /// Predict Hamiltonian blocks, serially or on several ranks.
    Forward(#[command(flatten)] Overrides),
    /// Full-batch training against a target Hamiltonian.
    Train(#[command(flatten)] Overrides),
    /// Time the SO(2) block over a sweep of message batch sizes.
    BenchThroughput {
        #[command(flatten)]
        common: Overrides,
        #[command(flatten)]
        bench: BenchArgs,
    },
    /// Write a synthetic structure, basis and toy Hamiltonian.
    GenSynthetic {
        #[command(flatten)]
        common: Overrides,
        #[command(flatten)]
        synth: SynthArgs,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = |o: &Overrides| config::RunConfig::resolve(o);
    match cli.command {
        Command::BuildGraph(o) => commands::build_graph(&cfg(&o)?),
        Command::Tile { common, tile } => commands::tile(&cfg(&common)?, &tile),
        Command::Partition(o) => commands::partition(&cfg(&o)?),
        Command::Forward(o) => commands::forward(&cfg(&o)?),
        Command::Train(o) => commands::train(&cfg(&o)?),
        Command::BenchThroughput { common, bench } => bench::run(&cfg(&common)?, &bench),
        Command::GenSynthetic { common, synth } => commands::gen_synthetic(&cfg(&common)?, &synth),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !matches!(e, CliError::Child(_)) {
                eprintln!("eqgnn: {e}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
