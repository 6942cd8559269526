//! `posrec`: one entry point for encoding checks, preprocessing, training,
//! evaluation and the experiment harnesses.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation failure,
//! 3 numerical failure.

mod commands;
mod options;

use std::fmt;
use std::process::ExitCode;

use posrec_core::{Error, ErrorCategory};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl CliError {
    pub fn from_core(e: Error) -> Self {
        CliError::Core(e)
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e.category() {
                ErrorCategory::Data => 2,
                ErrorCategory::Numerical => 3,
            },
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let matches = match options::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if matches.get_flag("verbose") { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let (verb, sub) = matches.subcommand().expect("subcommand required");
    let result = options::Options::resolve(verb, sub).and_then(|opts| commands::run(&opts));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("posrec {verb}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
