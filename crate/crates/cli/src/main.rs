//! `scalenet` command-line tool.

mod commands;
mod config;
mod record;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "scalenet", version, about = "Scale-ratio estimation and scale-aware matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Flat TOML file with the command's parameters.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides a single key; the value is parsed as TOML, else taken as a string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic zoom pairs and write a manifest.
    Generate(ConfigArgs),
    /// Train a model on the pairs of a manifest.
    Train(ConfigArgs),
    /// Predict scale ratios for the pairs of a manifest.
    Estimate(ConfigArgs),
    /// Match every pair with and without scale-aware resizing.
    Match(ConfigArgs),
    /// Compute ratio, pose and correspondence metrics from result tables.
    Evaluate(ConfigArgs),
    /// Render columns of a table as a line chart.
    Plot(ConfigArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate::run(&a),
        Command::Train(a) => commands::train::run(&a),
        Command::Estimate(a) => commands::estimate::run(&a),
        Command::Match(a) => commands::matching::run(&a),
        Command::Evaluate(a) => commands::evaluate::run(&a),
        Command::Plot(a) => commands::plot::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
