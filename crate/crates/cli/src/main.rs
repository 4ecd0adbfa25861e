mod artifacts;
mod commands;
mod config;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use config::{Cli, Command};

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match &cli.command {
        Command::Simulate { data, out } => commands::simulate(data, out),
        Command::Smooth {
            data,
            fit,
            dataset,
            strict,
            out,
        } => commands::smooth(data, fit, dataset.as_ref(), *strict, out),
        Command::Fpca {
            m,
            truncate_negative,
            out,
        } => commands::fpca_cmd(*m, *truncate_negative, out),
        Command::Eval { m, out } => commands::eval(*m, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
