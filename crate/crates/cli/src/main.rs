#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Failure;

fn run(cli: &Cli) -> commands::CmdResult {
    if let Some(k) = cli.global.threads {
        if k == 0 {
            return Err(Failure::Usage("--threads must be at least 1, got 0".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    match &cli.command {
        Command::Gen(a) => commands::gen(&cli.global, a),
        Command::Fit(a) => commands::fit(&cli.global, a),
        Command::Theory(a) => commands::theory(&cli.global, a),
        Command::Experiment(a) => commands::experiment(&cli.global, a),
        Command::Correct(a) => commands::correct(&cli.global, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {}: {msg}", cli.command.name());
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}: {e:#}", cli.command.name());
            ExitCode::from(1)
        }
    }
}
