use std::process::ExitCode;

use clap::Parser;
use vrefine_cli::args::Cli;
use vrefine_cli::{commands, init_logging, Output, EXIT_CONFIG};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(cli.global.verbose);
    let out = Output {
        json: cli.global.json,
    };
    match commands::dispatch(&cli.command, &cli.global, out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            out.error(&e);
            ExitCode::from(e.exit_code())
        }
    }
}
