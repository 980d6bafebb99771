//! The `nolan` command line: decoding, evaluation, sweeps, analyses, suite
//! generation and adapter checks, each writing a self-describing run
//! directory.

mod commands;
pub mod config;
pub mod error;
mod pool;
pub mod run;
pub mod suite;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

pub use commands::Outcome;
use config::{Cli, Command, FileConfig};
use error::CliError;

/// Parses `args`, runs the command and returns the process exit code.
/// Failures are reported on stderr as one JSON record.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let err = CliError::config(e.render().to_string().trim().to_string());
            eprintln!("{}", err.diagnostic());
            return err.exit_code();
        }
    };
    match execute(&cli) {
        Ok(outcome) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(outcome.summary.as_bytes());
            if let Some(dir) = &outcome.run_dir {
                let _ = writeln!(stdout, "run directory: {}", dir.display());
            }
            outcome.exit_code
        }
        Err(err) => {
            log::debug!("{err:?}");
            eprintln!("{}", err.diagnostic());
            err.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let file = match &cli.flags.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let run = config::resolve(&cli.command, &cli.flags, &file)?;
    log::debug!("resolved configuration: {run:?}");
    match &cli.command {
        Command::Decode { .. } => commands::decode(&run),
        Command::EvalPope => commands::eval_pope(&run),
        Command::Sweep { .. } => commands::sweep_cmd(&run),
        Command::Analyze { .. } => commands::analyze(&run),
        Command::ServeCheck { .. } => commands::serve_check_cmd(&run),
        Command::GenSuite { .. } => commands::gen_suite(&run),
        Command::Serve { tcp, model } => commands::serve(&run, tcp.as_deref(), *model),
    }
}
