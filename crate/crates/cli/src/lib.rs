//! Command-line pipelines: dataset generation, training, scoring, pruning,
//! MAC reports and the dynamic variant, all writing versioned JSON or CSV.

pub mod args;
mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};
use error::{CliError, CliResult};

pub const THREADS_ENV: &str = "PATCHSLIM_THREADS";

/// Runs one invocation and returns the process exit status.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    match try_run(argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn parser() -> clap::Command {
    let mut cmd = Cli::command().args_override_self(true);
    for name in Command::NAMES {
        cmd = cmd.mut_subcommand(name, |s| s.args_override_self(true));
    }
    cmd
}

/// First paragraph of a clap error, flattened to one line.
fn one_line(e: &clap::Error) -> String {
    let text = e.render().to_string();
    let head: Vec<&str> = text
        .lines()
        .take_while(|l| !l.trim().is_empty())
        .map(str::trim)
        .collect();
    let msg = head.join(" ");
    format!(
        "{} (see --help)",
        msg.strip_prefix("error: ").unwrap_or(&msg)
    )
}

fn threads(flag: Option<usize>) -> CliResult<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| {
                CliError::Usage(format!("{THREADS_ENV}={v:?} is not a thread count"))
            })?,
            Err(_) => return Ok(0),
        },
    };
    if n == 0 {
        return Err(CliError::Usage("thread count must be positive".into()));
    }
    Ok(n)
}

fn try_run(argv: Vec<OsString>) -> CliResult<()> {
    let argv = config::merge_config(argv)?;
    let matches = match parser().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(one_line(&e))),
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(one_line(&e)))?;
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .try_init();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads(cli.threads)?)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))?;
    pool.install(|| commands::dispatch(&cli.command))
}
