//! `ricsp`: command-line driver for recursive incremental CSP experiments.
//!
//! Exit status: 0 on success, 2 for invalid parameters or input files, 3 when
//! a capacity guard trips, 1 for anything else (I/O, failed fits).

mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use ricsp_core::Error;

fn exit_code(err: &anyhow::Error) -> u8 {
    let core = err.chain().find_map(|e| e.downcast_ref::<Error>());
    match core {
        Some(Error::Parameter(_) | Error::Parse { .. }) => 2,
        Some(Error::Capacity(_)) => 3,
        Some(_) | None
            if err
                .chain()
                .any(|e| e.is::<serde_json::Error>() || e.is::<toml::de::Error>()) =>
        {
            2
        }
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = args::Cli::parse();
    let result = args::resolve(&cli).and_then(|(config, out)| commands::execute(&config, &out));
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            println!("{}", outcome.message);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
