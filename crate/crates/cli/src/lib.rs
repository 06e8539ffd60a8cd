//! Command-line front end: argument parsing, run directories, exit codes.

pub mod commands;
pub mod error;
pub mod settings;

use clap::Parser;

pub use error::{CliError, CliResult, EXIT_CHECKPOINT, EXIT_INPUT, EXIT_NUMERIC, EXIT_OK};

#[derive(Parser, Debug)]
#[command(name = "grnlink", version, about = "Supervised gene regulatory network inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: commands::Command,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
