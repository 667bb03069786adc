//! `stochflux`: runs kicked conservation-law experiments and replays their artifacts.

mod artifact;
mod config;
mod experiments;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{ConfigError, SEED_ENV};
use crate::experiments::is_input_error;

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "stochflux", version, about = "Kicked conservation-law experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML or JSON config.
    Run {
        config: PathBuf,
        /// Worker threads for ensemble experiments (not part of the config hash).
        #[arg(long)]
        workers: Option<usize>,
        /// Dotted overrides such as `--experiment.a=1` or `--kick.sigma_target=0`.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Re-run an artifact's experiment and check the outputs are byte-identical.
    Replay {
        artifact: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
}

/// Pulls `--workers N` / `--workers=N` out of the trailing overrides.
fn split_workers(overrides: Vec<String>) -> Result<(Option<usize>, Vec<String>), String> {
    let mut workers = None;
    let mut rest = Vec::new();
    let mut it = overrides.into_iter();
    while let Some(arg) = it.next() {
        let value = if arg == "--workers" {
            Some(it.next().ok_or("--workers needs a value")?)
        } else {
            arg.strip_prefix("--workers=").map(str::to_string)
        };
        match value {
            Some(v) => workers = Some(v.parse().map_err(|_| format!("--workers: `{v}` is not a count"))?),
            None => rest.push(arg),
        }
    }
    Ok((workers, rest))
}

fn execute(cfg: &config::ExperimentConfig, workers: Option<usize>) -> Result<Vec<(String, Vec<u8>)>, ExitCode> {
    let resolved = cfg.resolve().map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_USAGE)
    })?;
    let outcome = experiments::run(cfg, &resolved, workers).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(if is_input_error(&e) { EXIT_USAGE } else { EXIT_FAIL })
    })?;
    for p in &outcome.properties {
        println!("{}", p.line());
    }
    Ok(artifact::render(cfg, &outcome))
}

fn run(config: &Path, overrides: Vec<String>, workers: Option<usize>) -> ExitCode {
    let (extra, overrides) = match split_workers(overrides) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = match config::load(config, &overrides, env_seed.as_deref()) {
        Ok(c) => c,
        Err(e @ (ConfigError::Io { .. } | ConfigError::Parse { .. } | ConfigError::Invalid(_))) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let files = match execute(&cfg, workers.or(extra)) {
        Ok(f) => f,
        Err(code) => return code,
    };
    let dir = artifact::run_dir(&cfg);
    if let Err(e) = artifact::write(&dir, &files) {
        eprintln!("error: cannot write {}: {e}", dir.display());
        return ExitCode::from(EXIT_USAGE);
    }
    println!("artifact: {}", dir.join(artifact::ARTIFACT_FILE).display());
    let passed = files_passed(&files);
    ExitCode::from(if passed { 0 } else { EXIT_FAIL })
}

fn files_passed(files: &[(String, Vec<u8>)]) -> bool {
    files
        .iter()
        .find(|(n, _)| n == artifact::ARTIFACT_FILE)
        .and_then(|(_, b)| serde_json::from_slice::<serde_json::Value>(b).ok())
        .and_then(|v| v.get("passed").and_then(serde_json::Value::as_bool))
        .unwrap_or(false)
}

fn replay(path: &Path, workers: Option<usize>) -> ExitCode {
    let cfg = match artifact::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let files = match execute(&cfg, workers) {
        Ok(f) => f,
        Err(code) => return code,
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    let diff = artifact::differing(dir, &files);
    if diff.is_empty() {
        println!("PASS replay: {} files byte-identical", files.len());
        ExitCode::SUCCESS
    } else {
        println!("FAIL replay: differing files: {}", diff.join(", "));
        ExitCode::from(EXIT_FAIL)
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            workers,
            overrides,
        } => run(&config, overrides, workers),
        Command::Replay { artifact, workers } => replay(&artifact, workers),
    }
}
