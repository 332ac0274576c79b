//! `qgcomp` command-line tool: simulate, fit, report.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod args;
mod error;
mod fit;
mod output;
mod records;
mod simulate;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, FitConfig, SimulateConfig};
use error::CliResult;

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => simulate::run(&SimulateConfig::resolve(a)?),
        Command::Fit(a) => fit::run(&FitConfig::resolve(a)?),
        Command::Report(a) => {
            let (input, out, format) = args::report_paths(&a)?;
            simulate::report(&input, &out, format)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.failure.exit_code())
        }
    }
}
