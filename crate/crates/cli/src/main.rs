//! `weightscape` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Explore the weight space of class-conditional image generators.
#[derive(Debug, Parser)]
#[command(name = "weightscape", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a deterministic synthetic checkpoint for a graph config.
    SynthCheckpoint {
        /// Built-in config name or JSON config file.
        #[arg(long, default_value = "tiny64")]
        config: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// unit_normal or scaled_fan_in.
        #[arg(long, default_value = "scaled_fan_in")]
        scheme: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multiply every selected weight by (1 + alpha * g), g standard normal.
    Perturb {
        #[command(flatten)]
        base: BaseArgs,
        #[arg(long, default_value_t = 0.35)]
        alpha: f64,
        #[arg(long, default_value_t = 0, conflicts_with = "seeds")]
        seed: u64,
        /// Inclusive seed range `A..B`; writes `seed<N>.wsc` into --outdir.
        #[arg(long, requires = "outdir")]
        seeds: Option<String>,
        #[command(flatten)]
        kinds: KindArgs,
        #[arg(long, required_unless_present = "seeds")]
        out: Option<PathBuf>,
        #[arg(long)]
        outdir: Option<PathBuf>,
    },
    /// Replace whole blocks by statistics-matched normal draws.
    RandomizeBlock {
        #[command(flatten)]
        base: BaseArgs,
        /// Block list, e.g. `B2` or `B1..B3,ENTRY`.
        #[arg(long)]
        blocks: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        stats: StatsArgs,
        #[command(flatten)]
        kinds: KindArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Randomize each block in turn and render one comparison grid per block.
    BlockSweep {
        #[command(flatten)]
        base: BaseArgs,
        #[arg(long, default_value = "B1..B7")]
        blocks: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        stats: StatsArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Replace a seeded random subset of the elements of matching entries.
    MaskSubstitute {
        #[command(flatten)]
        base: BaseArgs,
        /// Glob over entry names (`*`, `?`).
        #[arg(long, default_value = "*")]
        pattern: String,
        /// Restrict matches to these blocks.
        #[arg(long)]
        mask_blocks: Option<String>,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        mask_seed: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        stats: StatsArgs,
        #[command(flatten)]
        kinds: KindArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a grid: one column per checkpoint, one row per (class, latent).
    Render {
        #[arg(long)]
        graph: Option<String>,
        /// Comma-separated checkpoint files in column order.
        #[arg(long, value_delimiter = ',', required = true)]
        checkpoints: Vec<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
        /// PNG path; provenance goes to `<stem>.provenance.json` beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-entry weight statistics as JSON lines.
    Stats {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        stats: StatsArgs,
    },
    /// Per-entry differences between two checkpoints as JSON lines.
    Diff {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Check replaced blocks against the base statistics (JSON lines).
    MatchStats {
        #[command(flatten)]
        base: BaseArgs,
        #[arg(long)]
        replaced: PathBuf,
        #[arg(long)]
        blocks: String,
        #[command(flatten)]
        stats: StatsArgs,
    },
    /// Image distance from the base output as alpha grows.
    Diverge {
        #[command(flatten)]
        base: BaseArgs,
        /// Ascending, starting at 0.
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.35,0.5")]
        alphas: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        latent_seed: u64,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 0)]
        class: usize,
        #[command(flatten)]
        kinds: KindArgs,
    },
    /// Run the HTTP exploration service.
    Serve {
        #[command(flatten)]
        base: BaseArgs,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value = "gallery")]
        gallery: PathBuf,
        /// Derived checkpoints and grid images kept in memory.
        #[arg(long, default_value_t = 32)]
        cache: usize,
    },
    /// Regenerate a saved gallery pick from its record.
    Replay {
        /// Pick record (JSON) written by the service.
        #[arg(long)]
        pick: PathBuf,
        /// Base checkpoint; defaults to the one named in the record.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct BaseArgs {
    #[arg(long)]
    base: PathBuf,
    /// Graph config; defaults to the one recorded in the checkpoint, else tiny64.
    #[arg(long)]
    graph: Option<String>,
}

#[derive(Debug, Args)]
struct KindArgs {
    /// Comma-separated parameter kinds; defaults depend on the operation.
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Whole-entry statistics for conv kernels too (instead of per kernel position).
    #[arg(long)]
    whole_entry_stats: bool,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long, value_delimiter = ',', default_value = "0")]
    classes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    latent_seed: u64,
    #[arg(long, default_value_t = 2)]
    count: usize,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

type Outcome = Result<(), Failure>;

fn configure_threads() -> Outcome {
    let Ok(v) = std::env::var("WEIGHTSCAPE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("WEIGHTSCAPE_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match configure_threads().and_then(|()| commands::run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(m) | Failure::Data(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
