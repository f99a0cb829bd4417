use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

/// Record of one run, written next to its outputs. Only `started_unix_ms`
/// and `duration_ms` vary between identical runs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub params: BTreeMap<String, Value>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub report: BTreeMap<String, Value>,
    pub started_unix_ms: u128,
    pub duration_ms: u128,
}

pub struct Run {
    command: &'static str,
    seed: u64,
    started: Instant,
    started_unix_ms: u128,
    pub params: BTreeMap<String, Value>,
    pub inputs: Vec<String>,
    pub report: BTreeMap<String, Value>,
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Run {
    pub fn new(command: &'static str, seed: u64) -> Self {
        let started_unix_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
        Self {
            command,
            seed,
            started: Instant::now(),
            started_unix_ms,
            params: BTreeMap::new(),
            inputs: Vec::new(),
            report: BTreeMap::new(),
            files: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl Into<Value>) {
        self.params.insert(key.to_string(), value.into());
    }

    pub fn report(&mut self, key: &str, value: impl Into<Value>) {
        self.report.insert(key.to_string(), value.into());
    }

    /// Read an input file and record its path.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        self.inputs.push(path.display().to_string());
        std::fs::read(path).with_context(|| format!("{}: cannot read", path.display()))
    }

    /// Queue an output; nothing is written until [`Run::finish`].
    pub fn output(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    /// Write queued outputs and the manifest at `manifest_path`.
    pub fn finish(self, manifest_path: &Path) -> Result<BTreeMap<String, Value>> {
        for (path, bytes) in &self.files {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("{}: cannot create directory", dir.display()))?;
            }
            std::fs::write(path, bytes).with_context(|| format!("{}: cannot write", path.display()))?;
        }
        let manifest = RunManifest {
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            params: self.params,
            inputs: self.inputs,
            outputs: self.files.iter().map(|(p, _)| p.display().to_string()).collect(),
            report: self.report.clone(),
            started_unix_ms: self.started_unix_ms,
            duration_ms: self.started.elapsed().as_millis(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(manifest_path, text).with_context(|| format!("{}: cannot write", manifest_path.display()))?;
        Ok(self.report)
    }
}

/// `out.ext` -> `out.ext.manifest.json`.
pub fn manifest_for_file(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn manifest_for_dir(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}
