//! `selfcal`: simulate motion-corrupted sparse-view scans, reconstruct them
//! with a jointly pose-corrected neural field, run the FBP baseline and
//! tabulate results.

mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use crate::commands::{CliError, Cli};

fn main() -> ExitCode {
    let argv = match config::expand_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(CliError::Usage(String::new()).code());
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = config::init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
