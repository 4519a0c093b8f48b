use std::process::ExitCode;

use clap::Parser;

use polariton::cli::{run, Cli};
use polariton::io::error_json;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(2)
        }
    }
}
