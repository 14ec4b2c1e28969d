//! `ncp`: preprocessing, two-stage matching, denoising, demonstrations,
//! evaluation and keypoint transfer driven by one TOML configuration.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
use crate::error::CliResult;

#[derive(Parser)]
#[command(
    name = "ncp",
    version,
    about = "Neural correspondence prior shape matching"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(short, long, global = true)]
    output_dir: Option<PathBuf>,
    /// Overrides `cache_dir` (the NCP_CACHE_DIR variable takes precedence).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// `dotted.key=value` override, e.g. `train.lr=0.01`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Build the Laplacian basis cache of every input shape.
    Preprocess,
    /// Two-stage unsupervised matching over the collection.
    NcpUn,
    /// Test-time denoising of one map.
    Denoise,
    /// Training curves under corrupted supervision.
    Demo,
    /// Score map files against ground truth.
    Eval,
    /// Few-shot keypoint transfer.
    Fskd,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Preprocess => "preprocess",
            Command::NcpUn => "ncp-un",
            Command::Denoise => "denoise",
            Command::Demo => "demo",
            Command::Eval => "eval",
            Command::Fskd => "fskd",
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let ov = Overrides {
        seed: cli.seed,
        output_dir: cli.output_dir.clone(),
        cache_dir: cli.cache_dir.clone(),
        set: cli.set.clone(),
    };
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p, &ov)?,
        None => RunConfig::from_toml("", &std::env::current_dir().unwrap_or_default(), &ov)?,
    };
    log::info!(
        "{}: config {} seed {}",
        cli.command.name(),
        cfg.hash(),
        cfg.seed
    );
    match cli.command {
        Command::Preprocess => commands::preprocess(&cfg),
        Command::NcpUn => commands::ncp_un_cmd(&cfg),
        Command::Denoise => commands::denoise(&cfg),
        Command::Demo => commands::demo(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Fskd => commands::fskd(&cfg),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ncp {}: {e}", cli.command.name());
            e.exit_code() as u8
        }
    }
}
