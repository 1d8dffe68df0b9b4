mod args;
mod commands;
mod render;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

const LOG_ENV: &str = "CALIB_LOG_LEVEL";

fn exit_code(err: &calibkit::Error) -> u8 {
    match err {
        calibkit::Error::Divergence(_) => 4,
        e if e.is_input_error() => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
