//! Command-line pipeline: `prepare`, `train`, `evaluate`, `ablate`,
//! `export` and `synth`.

pub mod commands;
pub mod config;
pub mod manifest;

use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use tcft_bed::train::Variant;

pub use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "tcft-bed", version, about = "Remaining-useful-life pipeline on C-MAPSS")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Window sizes trained at once
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse raw files, select sensors and write the windowed dataset
    Prepare(Common),
    /// Train one model per window size
    Train(Common),
    /// Score the checkpoints on the test set
    Evaluate(Common),
    /// Train and score each variant
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated variant names, replacing the config list
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
    },
    /// Write final-step attention weights of the test engines
    Export(Common),
    /// Write a seeded synthetic corpus in the raw C-MAPSS layout
    Synth {
        #[command(flatten)]
        common: Common,
        /// A handful of short engines instead of the full-size corpus
        #[arg(long)]
        small: bool,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let o = Overrides {
        seed: common.seed,
        out_dir: common.out.clone(),
        jobs: common.jobs,
    };
    RunConfig::load(common.config.as_deref(), &o)
}

/// Runs one command; the returned paths are the files it wrote.
pub fn run(cli: Cli, log: &mut dyn Write) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::Prepare(c) => commands::cmd_prepare(&load(&c)?, log),
        Command::Train(c) => commands::cmd_train(&load(&c)?, log),
        Command::Evaluate(c) => commands::cmd_evaluate(&load(&c)?, log),
        Command::Ablate { common, variants } => {
            let mut config = load(&common)?;
            if let Some(v) = variants {
                config.variants = v;
            }
            commands::cmd_ablate(&config, log)
        }
        Command::Export(c) => commands::cmd_export(&load(&c)?, log),
        Command::Synth { common, small } => commands::cmd_synth(&load(&common)?, small, log),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I, log: &mut dyn Write) -> Result<Vec<PathBuf>>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    run(cli, log)
}
