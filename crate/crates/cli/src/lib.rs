//! Command-line front end for the threathunt pipeline.

pub mod args;
pub mod commands;
pub mod config;

use std::fmt;

use anyhow::Result;
use clap::Parser;

pub use args::{Cli, Command};
pub use config::RunConfig;

/// Bad flags, config or input files: exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

/// 2 for input and usage problems, 1 for anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<InputError>().is_some() {
            return EXIT_INPUT;
        }
        if let Some(e) = cause.downcast_ref::<threathunt_core::Error>() {
            return if e.is_input_error() { EXIT_INPUT } else { EXIT_RUNTIME };
        }
    }
    EXIT_RUNTIME
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let cfg = cli.resolve_config()?;
    if let Some(n) = cfg.threads {
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Preprocess(_) => {
            commands::cmd_preprocess(&cfg)?;
        }
        Command::Augment(_) => {
            commands::cmd_augment(&cfg)?;
        }
        Command::Train(_) => {
            let (_, history) = commands::cmd_train(&cfg)?;
            if let Some(last) = history.epochs.last() {
                println!(
                    "epoch {}: train loss {:.4}, train accuracy {:.4}, test accuracy {}",
                    last.epoch,
                    last.train_loss,
                    last.train_accuracy,
                    last.test_accuracy.map_or("-".into(), |a| format!("{a:.4}"))
                );
            }
        }
        Command::Evaluate(_) => {
            let report = commands::cmd_evaluate(&cfg)?;
            print!("{}", report.to_text());
        }
        Command::Gradcheck(a) => {
            let summary = commands::cmd_gradcheck(&cfg, a.inject_fault, a.json.as_deref())?;
            print!("{}", summary.to_text());
            if !summary.passed() {
                return Ok(EXIT_RUNTIME);
            }
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()),
    }
    Ok(EXIT_OK)
}

/// Entry point shared by the binary: parses `std::env::args`, sets up
/// logging, runs, and maps errors to exit codes.
pub fn main_with_args() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
