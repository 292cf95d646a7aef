//! Command-line driver: simulate series, fit them, re-analyze stored draws
//! and run simulation studies. Every run directory carries a manifest with
//! the resolved configuration and the hash of each output file.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod graph;
pub mod report;
pub mod svg;
pub mod truth;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "varorder", version, about = "Bayesian order determination for stationary vector autoregressions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a stationary VAR and write data.csv and truth.json.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a CSV series and write draws, diagnostics and analyses.
    Fit {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the sampler seed of the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute order posterior, Granger network and decomposition from
    /// the draws of a fit run.
    Analyze {
        #[arg(long)]
        run: PathBuf,
        /// Defaults to `<run>/analysis`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        granger: bool,
        #[arg(long)]
        decompose: bool,
        #[arg(long)]
        components: Option<usize>,
        /// CSV with columns name,label,x,y for the Granger graph.
        #[arg(long)]
        regions: Option<PathBuf>,
    },
    /// Run a grid of simulate-and-fit cells.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print convergence diagnostics of a fit run.
    Diagnose {
        #[arg(long)]
        run: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { spec, out } => commands::cmd_simulate(&spec, &out),
        Command::Fit { data, config, out, seed } => commands::cmd_fit(&commands::FitArgs { data, config, out, seed }),
        Command::Analyze {
            run,
            out,
            beta,
            granger,
            decompose,
            components,
            regions,
        } => commands::cmd_analyze(&commands::AnalyzeArgs {
            run,
            out,
            beta,
            granger,
            decompose,
            components,
            regions,
        }),
        Command::Study { config, out } => commands::cmd_study(&config, &out),
        Command::Diagnose { run, json } => {
            let d = commands::cmd_diagnose(&run)?;
            if json {
                print!("{}", config::to_json(&d));
            } else {
                print!("{}", commands::format_diagnostics(&d));
            }
            Ok(())
        }
    }
}
