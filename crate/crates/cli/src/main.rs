//! `hhcl` command-line front end.
//!
//! Exit codes: 0 success, 2 usage/config, 3 I/O or file format,
//! 4 numeric failure, 5 clustering collapse.

mod args;
mod commands;
mod error;
mod manifest;

use clap::Parser;

use args::{Cli, Command};
use error::{CliError, CliResult};

const THREADS_ENV: &str = "HHCL_THREADS";

fn configure_threads(deterministic: bool) -> CliResult<()> {
    let threads = if deterministic {
        Some(1)
    } else {
        match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| CliError::config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
            ),
            Err(_) => None,
        }
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads(cli.deterministic)?;
    match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Cluster(a) => commands::cluster(a),
        Command::Train(a) => commands::train(a, cli.deterministic),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Ablate(a) => commands::ablate(a, cli.deterministic),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.code());
    }
}
