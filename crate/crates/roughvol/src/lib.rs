//! Command-line front end of the rough volatility weak-error laboratory:
//! argument parsing, report formats and the binary path dump.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod paths;
pub mod selfcheck;

use std::fs::File;
use std::io::{BufWriter, Write};

pub use config::{Command, Format, RunConfig};
pub use error::CliError;
pub use output::{Check, Report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;

/// Caps the rayon pool; only the first call in a process takes effect.
pub fn configure_threads(threads: Option<usize>) {
    if let Some(t) = threads.filter(|&t| t > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
}

/// Runs a command, writes its report to `--out` (or `stdout`) and returns
/// the report.
pub fn run<W: Write>(config: &RunConfig, stdout: &mut W) -> Result<Report, CliError> {
    configure_threads(config.threads);
    let report = commands::execute(config)?;
    match &config.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            write_report(&report, config.format, &mut w)?;
            w.flush()?;
        }
        None => write_report(&report, config.format, stdout)?,
    }
    Ok(report)
}

pub fn write_report<W: Write>(report: &Report, format: Format, out: &mut W) -> Result<(), CliError> {
    match format {
        Format::Csv => report.write_csv(out),
        Format::Json => report.write_json(out),
    }
}

/// Exit status for a finished run: check failures count in `--check` mode
/// and always for `selfcheck`.
pub fn exit_code(config: &RunConfig, report: &Report) -> i32 {
    let checking = config.check || config.command == Command::Selfcheck;
    if checking && !report.all_passed() {
        EXIT_CHECK_FAILED
    } else {
        EXIT_OK
    }
}

/// Full entry point: parse, run, report checks on `stderr`.
pub fn main_with_args<I, T, W, E>(args: I, stdout: &mut W, stderr: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
    W: Write,
    E: Write,
{
    let config = match RunConfig::parse_from_args(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = write!(stderr, "{e}");
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_ERROR,
            };
        }
    };
    match run(&config, stdout) {
        Ok(report) => {
            for c in &report.checks {
                let _ = writeln!(stderr, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            exit_code(&config, &report)
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_ERROR
        }
    }
}
