//! Command-line driver: parses arguments, resolves the run configuration
//! and dispatches to one subcommand. Every subcommand prints a single JSON
//! document on stdout and writes bulk results only to the paths it is given.

pub mod cli;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

use semabridge::Error;

pub use cli::Cli;
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;

/// Exit code for an error: 2 for filesystem and file-format problems,
/// 1 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_io() {
        EXIT_IO
    } else {
        EXIT_INVALID
    }
}

pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    EXIT_INVALID
                }
            };
        }
    };
    match commands::dispatch(&cli) {
        Ok(outcome) => {
            let _ = writeln!(stdout, "{}", outcome.json);
            if outcome.ok {
                EXIT_OK
            } else {
                EXIT_INVALID
            }
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}
