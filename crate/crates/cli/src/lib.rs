//! Experiment runner behind the `spinbench` binary.

// Per-instance failures travel as ready-made `Record`s; they are rare and cold.
#![allow(clippy::result_large_err)]

pub mod args;
pub mod commands;
pub mod output;
pub mod records;
pub mod report;

use anyhow::Result;
use args::{Cli, Command};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "SPINBENCH_OUT";

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Solve(a) => commands::solve(a),
        Command::Resilience(a) => commands::resilience(a),
        Command::Yield(a) => commands::yield_(a),
        Command::Mine(a) => commands::mine(a),
        Command::Report(a) => report::run(a),
    }
}

/// Parse `argv` (program name first) and run it.
pub fn run_args<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    use clap::Parser;
    run(Cli::try_parse_from(argv)?)
}
