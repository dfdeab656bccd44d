//! Command-line driver for spectral graph diffusion.
//!
//! Every command reads the same flat settings (config file, positional
//! `key=value` overrides, dedicated flags), writes its outputs under
//! `--out`, and records the resolved configuration in
//! `manifest_<command>.json`. Exit codes: 0 success, 1 usage error,
//! 2 runtime failure, 3 verification failure.

pub mod args;
mod commands;
pub mod config;
pub mod error;
mod manifest;
pub mod svg;

use std::ffi::OsString;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::config::Settings;
use crate::error::{CliError, CliResult, EXIT_OK, EXIT_USAGE};

fn configure_threads(flag: Option<usize>) -> CliResult<()> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var("GSDM_THREADS") {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::usage(format!("GSDM_THREADS=`{v}` is not a thread count")))?,
            ),
            _ => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::usage("thread count must be at least 1"));
        }
        // A second call in the same process keeps the first pool.
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("global thread pool already configured");
        }
    }
    Ok(())
}

fn settings_for(command: &Command) -> CliResult<Settings> {
    let common = command.common();
    let mut s = Settings::new(&common.out);
    if let Some(path) = &common.config {
        s.load_file(path)?;
    }
    s.apply_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        s.set("seed", seed.to_string())?;
    }
    match command {
        Command::Train { variant: Some(v), .. } => s.set("model.variant", v.key())?,
        Command::Sample {
            steps,
            alpha,
            solver,
            variant,
            count,
            ..
        } => {
            if let Some(v) = steps {
                s.set("sample.steps", v.to_string())?;
            }
            if let Some(v) = alpha {
                s.set("sample.alpha", v.to_string())?;
            }
            if let Some(v) = solver {
                s.set("sample.solver", if *v == args::SolverArg::Pc { "pc" } else { "splitting" })?;
            }
            if let Some(v) = variant {
                s.set("model.variant", v.key())?;
            }
            if let Some(v) = count {
                s.set("sample.count", v.to_string())?;
            }
        }
        Command::Eval { generated, test, method, .. } => {
            if let Some(p) = generated {
                s.set("data.generated", p.display().to_string())?;
            }
            if let Some(p) = test {
                s.set("data.test", p.display().to_string())?;
            }
            if let Some(m) = method {
                s.set("eval.method", m.clone())?;
            }
        }
        _ => {}
    }
    Ok(s)
}

fn dispatch(command: &Command) -> CliResult<()> {
    configure_threads(command.common().threads)?;
    let settings = settings_for(command)?;
    match command {
        Command::GenData { .. } => commands::gen_data(&settings),
        Command::Train { resume, .. } => commands::train(&settings, resume.as_deref()),
        Command::Sample { .. } => commands::sample(&settings),
        Command::Eval { .. } => commands::eval(&settings),
        Command::Ablate { axis, train_inline, .. } => commands::ablate(&settings, *axis, *train_inline),
        Command::Verify { inject_kernel_bug, .. } => commands::verify(&settings, *inject_kernel_bug),
    }
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("gsdm {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}
