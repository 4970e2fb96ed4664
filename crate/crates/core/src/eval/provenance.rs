//! Build identifier, configuration hash and run manifests.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// `git describe` of the source tree at build time.
pub fn build_id() -> &'static str {
    env!("VECSVC_BUILD_ID")
}

/// SHA-256 of the compact JSON form of `config`, as lowercase hex.
pub fn config_hash(config: &impl Serialize) -> Result<String> {
    let text = serde_json::to_string(config)?;
    Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

/// Record of one command or experiment run. Timestamps live only here, so
/// every other output is a pure function of the inputs.
#[derive(Debug)]
pub struct RunManifest {
    command: String,
    config: Value,
    config_hash: String,
    seed: u64,
    threads: usize,
    started_unix: u64,
    clock: Instant,
    outputs: Vec<PathBuf>,
    extra: serde_json::Map<String, Value>,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seed: u64, threads: usize) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            config_hash: config_hash(config)?,
            seed,
            threads,
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            clock: Instant::now(),
            outputs: Vec::new(),
            extra: serde_json::Map::new(),
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn add_output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Attaches a summary value under `key`.
    pub fn note(&mut self, key: &str, value: Value) {
        self.extra.insert(key.to_string(), value);
    }

    pub fn to_json(&self) -> Value {
        json!({
            "command": self.command,
            "build_id": build_id(),
            "config_hash": self.config_hash,
            "config": self.config,
            "seed": self.seed,
            "threads": self.threads,
            "started_unix": self.started_unix,
            "elapsed_s": self.clock.elapsed().as_secs_f64(),
            "outputs": self.outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "summary": Value::Object(self.extra.clone()),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
