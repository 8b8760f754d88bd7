//! `koopmankit` command-line front end.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod control;
mod identify;
mod output;
mod simulate;
mod spectral;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};
use koopmankit::dynamics::REGISTRY;
use koopmankit::Error;

use args::{Cli, Command};

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
    NotStabilizable(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::NotStabilizable(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numerical(m) | Failure::NotStabilizable(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::NotStabilizable { .. } => Failure::NotStabilizable(msg),
            Error::UnknownSystem(_)
            | Error::UnknownParam { .. }
            | Error::MissingParam { .. }
            | Error::InvalidArgument(_)
            | Error::Parse(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::TimeKind(_)
            | Error::DimensionMismatch(_)
            | Error::UnsupportedModel(_)
            | Error::DuplicateExponent(_) => Failure::Config(msg),
            _ => Failure::Numerical(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

fn registry_help() -> String {
    let width = REGISTRY.iter().map(|s| s.name.len()).max().unwrap_or(0);
    let mut out = String::from("Systems:\n");
    for s in REGISTRY {
        let defaults: Vec<String> = s.defaults.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let defaults = if defaults.is_empty() {
            String::new()
        } else {
            format!(" [{}]", defaults.join(", "))
        };
        out.push_str(&format!("  {:width$}  {}{}\n", s.name, s.summary, defaults));
    }
    out.push_str("\nExit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 not stabilizable");
    out
}

fn main() -> ExitCode {
    let cmd = Cli::command().after_help(registry_help());
    let matches = cmd.get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match &cli.command {
        Command::Simulate(a) => simulate::run(&cli.io, a),
        Command::Identify(a) => identify::run(&cli.io, a),
        Command::Spectral(a) => spectral::run(&cli.io, a),
        Command::Control(a) => control::run(&cli.io, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
