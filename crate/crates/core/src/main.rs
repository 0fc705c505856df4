use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = cortexsim::cli::Cli::parse();
    match cortexsim::cli::execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
