mod cli;
mod commands;
mod config;
mod plot;

use std::process::ExitCode;

use clap::Parser;

use crate::cli::Cli;
use crate::commands::Ctx;
use crate::config::Verbosity;

fn main() -> ExitCode {
    // clap exits with 2 on usage errors, which is also the config-error code
    let cli = Cli::parse();
    let ctx = Ctx {
        verbosity: Verbosity::from_env(),
    };
    match commands::run(cli.command, &ctx) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
