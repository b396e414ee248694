//! Line-oriented `key: value` run manifests.

use sha2::{Digest, Sha256};
use std::path::Path;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunManifest {
    lines: Vec<(String, String)>,
}

impl RunManifest {
    pub fn for_config(cfg: &RunConfig) -> RunManifest {
        let mut m = RunManifest::default();
        m.push("subcommand", &cfg.subcommand);
        for (k, v) in &cfg.params {
            m.push(&format!("config.{k}"), v);
        }
        m
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.lines.push((key.to_string(), value.to_string().replace('\n', " ")));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn lines(&self) -> &[(String, String)] {
        &self.lines
    }

    /// Records a written artifact with its SHA-256 digest.
    pub fn artifact(&mut self, name: &str, bytes: &[u8]) {
        self.push(&format!("artifact.{name}"), format!("sha256:{}", hex::encode(Sha256::digest(bytes))));
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.lines {
            s.push_str(k);
            s.push_str(": ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    /// Drops the `timing.` lines.
    pub fn without_timing(&self) -> RunManifest {
        RunManifest { lines: self.lines.iter().filter(|(k, _)| !k.starts_with("timing.")).cloned().collect() }
    }
}

/// Writes `bytes` to `dir/name` (when a directory is given) and records the digest.
pub fn emit(manifest: &mut RunManifest, dir: Option<&Path>, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(&dir.display().to_string(), e))?;
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path.display().to_string(), e))?;
    }
    manifest.artifact(name, bytes);
    Ok(())
}
