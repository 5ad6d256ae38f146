//! `landscape`: seeded experiment harness.
//!
//! Exit codes: 0 success, 1 completed run that FAILs its check, 2 failed
//! precondition (eligibility, rank, degenerate data), 64 config error,
//! 74 IO error.

mod artifact;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::artifact::ArtifactDir;
use crate::config::{ExperimentConfig, Overrides};
use crate::error::{CliError, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "landscape", version, about = "Non-attracting regions of local minima: seeded experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `seeds.data`.
    #[arg(long, global = true)]
    seed_data: Option<u64>,
    /// Overrides `lambda`.
    #[arg(long, global = true, allow_negative_numbers = true)]
    lambda: Option<f64>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Build a non-attracting region, walk it into a saddle and escape.
    Region,
    /// Non-increasing path to a global minimum in a wide network.
    Path,
    /// Witness a suboptimal minimum at infinity.
    Infinity {
        /// Verify the sign-flipped family (expected to FAIL).
        #[arg(long)]
        flipped: bool,
    },
    /// Train the student to a critical point.
    Train,
    /// Random-direction probe of a network's neighbourhood.
    Probe,
    /// Split one neuron and classify the embedding.
    Embed,
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    let overrides = Overrides { out: cli.out.clone(), seed_data: cli.seed_data, lambda: cli.lambda };
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    if let Command::Infinity { flipped: true } = cli.command {
        cfg.infinity.flipped = true;
    }
    let mut dir = ArtifactDir::create(&cfg.out, &cfg.hash())?;
    let code = match cli.command {
        Command::Region => commands::region(&cfg, &mut dir),
        Command::Path => commands::path(&cfg, &mut dir),
        Command::Infinity { .. } => commands::infinity(&cfg, &mut dir),
        Command::Train => commands::train(&cfg, &mut dir),
        Command::Probe => commands::probe(&cfg, &mut dir),
        Command::Embed => commands::embed(&cfg, &mut dir),
    }?;
    for p in dir.written() {
        println!("wrote {}", p.display());
    }
    Ok(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => {
            println!("{}", if code == 0 { "PASS" } else { "FAIL" });
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
