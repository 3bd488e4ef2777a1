use std::process::ExitCode;

use clap::Parser;
use srmamba_cli::{configure_threads, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        run(cli, &mut lock)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
