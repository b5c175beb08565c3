//! `tradeflow`: batch simulation, metrics, transcript linting and the
//! interactive session server.

mod args;
mod config;
mod golden;
mod metrics;
mod serve;
mod simulate;
mod validate;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unreadable config or inputs. Exit 2.
    #[error("{0}")]
    Usage(String),
    /// The command ran but found problems. Exit 1.
    #[error("{0}")]
    Findings(String),
}

impl CliError {
    pub fn usage(e: impl std::fmt::Display) -> Self {
        Self::Usage(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Findings(_) => 1,
            Self::Usage(_) => 2,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("TRADEFLOW_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let result = match cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Metrics(a) => metrics::run(a),
        Command::Validate(a) => validate::run(a),
        Command::Serve(a) => serve::run(a),
        Command::Golden(a) => golden::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
