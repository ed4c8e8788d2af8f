//! Command-line surface of the toolkit: argument and config-file handling,
//! the per-command pipelines, the self-test suite and report bundles.
//!
//! Every command writes `manifest.json` plus CSV tables into its output
//! directory. Exit codes: 0 success, 1 domain failure (an infeasible class,
//! a solver that did not converge, a failing self-test), 2 usage error.

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

pub mod args;
pub mod artifacts;
pub mod bundle;
pub mod commands;
pub mod config;
pub mod selftest;

pub use args::Cli;
pub use artifacts::Manifest;
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Domain(m) => f.write_str(m),
        }
    }
}

impl From<nlharm::Error> for CliError {
    fn from(e: nlharm::Error) -> Self {
        use nlharm::Error as E;
        match e {
            E::Contract(_) | E::Parse(_) | E::DimensionMismatch { .. } | E::DegreeOutOfRange { .. } | E::GridMismatch(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Domain(e.to_string())
    }
}

/// What a command reports back besides its artifacts.
pub struct Outcome {
    pub code: i32,
    pub manifest: Option<Manifest>,
    pub summary: String,
}

/// Parse `argv` (program name first), run the command and return the exit
/// code. Messages go to the given writers.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match config::expand_config(argv) {
        Ok(a) => a,
        Err(e) => return usage_failure(err, &e.to_string()),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match commands::execute(&cli.command) {
        Ok(o) => {
            let _ = write!(out, "{}", o.summary);
            o.code
        }
        Err(CliError::Usage(m)) => usage_failure(err, &m),
        Err(CliError::Domain(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_DOMAIN
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

fn usage_failure(err: &mut dyn Write, msg: &str) -> i32 {
    use clap::CommandFactory;
    let _ = writeln!(err, "error: {msg}\n\n{}", Cli::command().render_usage());
    EXIT_USAGE
}
