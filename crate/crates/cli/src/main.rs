//! `flexconv` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration error (invalid config, shape or
//! index errors, empty input), 3 I/O error, 4 numeric divergence.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flexconv::{EngineError, ErrorKind};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "flexconv", version, about = "Flex-convolution experiments on point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `threads` from the config.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset to the output directory.
    Gen(Common),
    /// Train and write loss log, metrics and checkpoint.
    Train(Common),
    /// Label the `input` cloud with a trained checkpoint.
    Infer(Common),
    /// Score a checkpoint on labeled data.
    Eval(Common),
    /// Time one flex-conv layer across point counts.
    Bench(Common),
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::ConfigInvalid | ErrorKind::ShapeMismatch | ErrorKind::IndexOutOfRange | ErrorKind::EmptyInput => 2,
        ErrorKind::IoFailure => 3,
        ErrorKind::NonFinite => 4,
    }
}

fn resolve(common: &Common) -> Result<RunConfig, EngineError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), EngineError> {
    let (common, cmd): (&Common, fn(&RunConfig) -> Result<(), EngineError>) = match &cli.command {
        Command::Gen(c) => (c, commands::cmd_gen),
        Command::Train(c) => (c, commands::cmd_train),
        Command::Infer(c) => (c, commands::cmd_infer),
        Command::Eval(c) => (c, commands::cmd_eval),
        Command::Bench(c) => (c, commands::cmd_bench),
    };
    let cfg = resolve(common)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| EngineError::config(format!("thread pool: {e}")))?;
    pool.install(|| cmd(&cfg))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind))
        }
    }
}
