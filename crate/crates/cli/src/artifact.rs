//! Artifact rendering, writing and replay.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::config::{from_document, ExperimentConfig};
use crate::experiments::Outcome;

pub const ARTIFACT_FILE: &str = "artifact.json";

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("cannot read artifact {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("artifact config is invalid: {0}")]
    Config(String),
    #[error("config hash mismatch: artifact says {stored}, config hashes to {computed}")]
    HashMismatch { stored: String, computed: String },
}

/// Every file of a run: experiment outputs, the resolved `config.toml`, and
/// `artifact.json` last. Contents depend only on the
/// config, never on the worker count or wall-clock time.
pub fn render(cfg: &ExperimentConfig, outcome: &Outcome) -> Vec<(String, Vec<u8>)> {
    let config: Value = serde_json::from_str(&cfg.canonical_json()).expect("canonical JSON parses");
    let names: Vec<&str> = outcome.files.iter().map(|(n, _)| n.as_str()).collect();
    let doc = json!({
        "config": config,
        "config_hash": cfg.hash(),
        "seed_root": cfg.seed_root,
        "experiment": cfg.experiment.kind(),
        "passed": outcome.properties.iter().all(|p| p.passed),
        "properties": outcome.properties,
        "results": outcome.results,
        "files": names,
    });
    let mut body = serde_json::to_vec_pretty(&doc).expect("artifact serializes");
    body.push(b'\n');
    let mut files = outcome.files.clone();
    files.push(("config.toml".into(), cfg.to_toml().into_bytes()));
    files.push((ARTIFACT_FILE.into(), body));
    files
}

/// `<output_dir>/<experiment>-<hash>`
pub fn run_dir(cfg: &ExperimentConfig) -> PathBuf {
    Path::new(&cfg.output_dir).join(format!("{}-{}", cfg.experiment.kind(), cfg.hash()))
}

pub fn write(dir: &Path, files: &[(String, Vec<u8>)]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

/// Loads the config stored in an artifact and checks it against the stamped hash.
pub fn load(path: &Path) -> Result<ExperimentConfig, ReplayError> {
    let unreadable = |reason: String| ReplayError::Unreadable {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| unreadable(e.to_string()))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| unreadable(e.to_string()))?;
    let stored = doc
        .get("config_hash")
        .and_then(Value::as_str)
        .ok_or_else(|| unreadable("missing config_hash".into()))?
        .to_string();
    let config = doc.get("config").ok_or_else(|| unreadable("missing config".into()))?;
    let cfg = from_document(config).map_err(|e| ReplayError::Config(e.to_string()))?;
    let computed = cfg.hash();
    if computed != stored {
        return Err(ReplayError::HashMismatch { stored, computed });
    }
    Ok(cfg)
}

/// Names of files whose on-disk bytes differ from the regenerated ones.
pub fn differing(dir: &Path, files: &[(String, Vec<u8>)]) -> Vec<String> {
    files
        .iter()
        .filter(|(name, bytes)| std::fs::read(dir.join(name)).map_or(true, |disk| &disk != bytes))
        .map(|(name, _)| name.clone())
        .collect()
}
