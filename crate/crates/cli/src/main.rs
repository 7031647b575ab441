//! `ivimlab` command-line tool.
//!
//! Exit codes: 0 on success, 2 for unusable input or arguments, 1 for
//! internal failures.

mod args;
mod commands;
mod failure;

use std::panic;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use failure::{input_error, CliResult, EXIT_INTERNAL, EXIT_OK};

fn dispatch(command: &Command) -> CliResult<()> {
    match command {
        Command::Phantom(a) => commands::phantom(a),
        Command::Fit(a) => commands::fit(a),
        Command::Fuse(a) => commands::fuse(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Summarize(a) => commands::summarize(a),
        Command::Report(a) => commands::report(a),
        Command::Classify(a) => commands::classify(a),
    }
}

#[cfg(feature = "parallel")]
fn run(cli: &Cli) -> CliResult<()> {
    use failure::Classify;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(input_error("--threads must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().internal()?;
    pool.install(|| dispatch(&cli.command))
}

#[cfg(not(feature = "parallel"))]
fn run(cli: &Cli) -> CliResult<()> {
    if cli.threads == Some(0) {
        return Err(input_error("--threads must be at least 1"));
    }
    dispatch(&cli.command)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::from(EXIT_OK as u8),
        Ok(Err(e)) => {
            eprintln!("ivimlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL as u8),
    }
}
