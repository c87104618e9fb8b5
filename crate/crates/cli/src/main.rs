use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;

use commands::{FixtureKind, Report, RunOptions};
use config::LoadedConfig;
use error::CliError;

/// Split-inference partition planning, retrieval simulation and privacy
/// tables for UAV/vehicle cross-view localization.
///
/// With --out the CSV report goes to that file and a readable table to
/// standard output; without it the CSV goes to standard output (optimize
/// then prints only its summary).
#[derive(Debug, Parser)]
#[command(name = "splitcvl", version)]
struct Cli {
    /// Scenario config (TOML). Omitted: the built-in default scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the selected command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// CSV output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; only independent seeds run in parallel.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: u32,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Fixture {
    /// Progressively degraded reconstructions.
    Attack,
    /// Reconstructions identical to the originals.
    Identity,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-cut device FLOPs and intermediate bytes.
    Profile,
    /// Cost breakdown for every device and cut at mean channels.
    Cost,
    /// Train an agent and compare its decision with the oracle.
    Optimize,
    /// Exhaustive optimal decision at mean channels.
    Oracle,
    /// Synthetic retrieval grid over UAV and ground query counts.
    RetrievalSim,
    /// Confidentiality table from a reconstruction corpus.
    Privacy {
        /// Corpus root; defaults to confidentiality.corpus from the config.
        corpus_dir: Option<PathBuf>,
        /// Use a generated corpus instead of a directory.
        #[arg(long, value_enum)]
        fixture: Option<Fixture>,
    },
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = LoadedConfig::load(cli.config.as_deref())?;
    let opts = RunOptions {
        seed: cli.seed,
        jobs: cli.jobs as usize,
    };
    let report: Report = match &cli.command {
        Command::Profile => commands::profile(&cfg)?,
        Command::Cost => commands::cost(&cfg)?,
        Command::Optimize => commands::optimize(&cfg, opts)?,
        Command::Oracle => commands::oracle(&cfg)?,
        Command::RetrievalSim => commands::retrieval_sim(&cfg, opts)?,
        Command::Privacy { corpus_dir, fixture } => {
            let kind = fixture.map(|f| match f {
                Fixture::Attack => FixtureKind::Attack,
                Fixture::Identity => FixtureKind::Identity,
            });
            commands::privacy(&cfg, corpus_dir.as_deref(), kind, opts)?
        }
    };
    let mut stdout = std::io::stdout().lock();
    match &cli.out {
        Some(path) => {
            fs::write(path, &report.csv).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            stdout.write_all(report.human.as_bytes())?;
        }
        None if matches!(cli.command, Command::Optimize) => stdout.write_all(report.human.as_bytes())?,
        None => stdout.write_all(report.csv.as_bytes())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("splitcvl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
