//! `factorbreak` command-line front end.
//!
//! Every command writes its outputs and a `manifest.json` into `--out`.
//! Failures are reported on stderr as a JSON object; the exit code is 1 for
//! numerical failures and 2 for usage, configuration or input errors.

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use crate::args::Cli;

/// Error raised by a command, tagged with its exit code.
#[derive(Debug)]
pub struct CliError {
    kind: String,
    message: String,
    code: u8,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: "UsageError".into(),
            message: message.into(),
            code: 2,
        }
    }

    fn emit(&self) -> ExitCode {
        let body = json!({ "error": self.kind, "message": self.message, "exit_code": self.code });
        eprintln!("{body}");
        ExitCode::from(self.code)
    }
}

impl From<factorbreak::Error> for CliError {
    fn from(e: factorbreak::Error) -> Self {
        CliError {
            kind: e.kind().into(),
            message: e.to_string(),
            code: if e.is_numerical() { 1 } else { 2 },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        factorbreak::Error::from(e).into()
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return CliError::usage(e.render().to_string().trim_end()).emit();
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.emit(),
    }
}
