use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    ExitCode::from(ssb_cli::main_with(ssb_cli::Cli::parse()))
}
