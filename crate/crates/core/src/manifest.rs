//! Run manifests: what a command read, what it wrote, and under which config.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub tool_version: String,
    pub seed: u64,
    /// Canonical config text.
    pub config: String,
    /// Input path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path to SHA-256. Timing files and the manifest itself are
    /// wall-clock dependent and listed separately.
    pub outputs: BTreeMap<String, String>,
    pub volatile_outputs: Vec<String>,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
}

impl RunManifest {
    pub fn start(command: &str, args: Vec<String>, config: &Config) -> Self {
        RunManifest {
            command: command.to_string(),
            args,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.to_text(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            volatile_outputs: Vec::new(),
            started_unix_s: unix_now(),
            finished_unix_s: 0.0,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let d = file_digest(path)?;
        self.inputs.insert(path.display().to_string(), d);
        Ok(())
    }

    /// Records every regular file under `dir` (non-recursive) as an input.
    pub fn input_dir(&mut self, dir: &Path) -> Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<Vec<_>>>()?;
        entries.sort_by_key(|e| e.path());
        for e in entries {
            if e.file_type()?.is_file() {
                self.input(&e.path())?;
            }
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let d = file_digest(path)?;
        self.outputs.insert(path.display().to_string(), d);
        Ok(())
    }

    pub fn volatile(&mut self, path: &Path) {
        self.volatile_outputs.push(path.display().to_string());
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.finished_unix_s = unix_now();
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&self)?;
        fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
        Ok(())
    }
}
