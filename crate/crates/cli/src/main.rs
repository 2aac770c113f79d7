use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fedmix_cli::{cmd_generate, cmd_personalize, cmd_train, load_config};

/// Federated EM simulator.
#[derive(Parser)]
#[command(name = "fedmix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic federation to `output_dir`.
    Generate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the configured algorithm and write round logs and parameters.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit mixture weights for unseen clients against trained components.
    Personalize {
        #[arg(long)]
        config: PathBuf,
        /// Component matrix, one row per component.
        #[arg(long)]
        theta: PathBuf,
        /// Dataset directory of the unseen clients.
        #[arg(long)]
        clients: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("FEDMIX_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("FEDMIX_THREADS must be a non-negative integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    configure_threads()?;
    let paths = match cli.command {
        Command::Generate { config } => vec![cmd_generate(&load_config(&config)?)?],
        Command::Train { config } => cmd_train(&load_config(&config)?)?,
        Command::Personalize { config, theta, clients } => {
            cmd_personalize(&load_config(&config)?, &theta, &clients)?
        }
    };
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}
