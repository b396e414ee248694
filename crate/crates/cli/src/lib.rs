//! Batch runner behind the `recurlab` binary: config ingestion, subcommand
//! dispatch, CSV/SVG artifacts and deterministic run manifests.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod svg;

use clap::Parser;
use std::ffi::OsString;

pub use config::{Cli, RunConfig};
pub use error::{CliError, ErrorClass};
pub use manifest::RunManifest;

/// Result of one invocation.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub exit_code: u8,
    pub stdout: String,
    pub manifest: RunManifest,
    pub error: Option<CliError>,
}

/// Parses `args` (program name first) and runs.
pub fn run_from_args<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => match RunConfig::from_cli(&cli) {
            Ok(cfg) => run(&cfg),
            Err(e) => failed(RunManifest::default(), e),
        },
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let code = if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { error::EXIT_PRECONDITION } else { 0 };
                return Outcome { exit_code: code, stdout: e.to_string(), manifest: RunManifest::default(), error: None };
            }
            failed(RunManifest::default(), CliError::precondition("Usage", e.to_string()))
        }
    }
}

fn failed(mut manifest: RunManifest, e: CliError) -> Outcome {
    manifest.push("status", "error");
    manifest.push("exit_code", e.exit_code());
    manifest.push("error.class", e.class.name());
    manifest.push("error.kind", &e.kind);
    manifest.push("error.message", &e.message);
    Outcome { exit_code: e.exit_code(), stdout: manifest.to_text(), manifest, error: Some(e) }
}

/// Runs a parsed configuration, writing artifacts and `manifest.txt` to the
/// output directory when one is configured.
pub fn run(cfg: &RunConfig) -> Outcome {
    let mut manifest = RunManifest::for_config(cfg);
    let result = commands::dispatch(cfg, &mut manifest);
    let mut outcome = match result {
        Ok(()) => {
            manifest.push("status", "ok");
            manifest.push("exit_code", 0);
            Outcome { exit_code: 0, stdout: manifest.to_text(), manifest, error: None }
        }
        Err(e) => failed(manifest, e),
    };
    if let Some(dir) = &cfg.out {
        let path = dir.join("manifest.txt");
        let written = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, outcome.manifest.to_text()));
        if let Err(e) = written {
            if outcome.error.is_none() {
                outcome = failed(outcome.manifest, CliError::io(&path.display().to_string(), e));
            }
        }
    }
    outcome
}
