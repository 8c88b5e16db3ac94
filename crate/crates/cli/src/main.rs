mod cli;
mod commands;
mod config;
mod output;
mod run;

use clap::Parser;
use std::process::ExitCode;

use crate::cli::Cli;
use crate::commands::{dispatch, Outcome};

const EXIT_INVALID: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Numeric failures get their own exit code; every other error is treated
/// as a problem with the inputs or configuration.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<biplink::Error>(), Some(biplink::Error::Numeric { .. })));
    if numeric {
        EXIT_NUMERIC
    } else {
        EXIT_INVALID
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Invalid) => ExitCode::from(EXIT_INVALID),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
