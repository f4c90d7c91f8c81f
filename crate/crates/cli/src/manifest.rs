//! Output directories with a manifest listing every file written.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

#[derive(Debug, Serialize)]
struct Versions {
    bonlab: &'static str,
    benchmark_format: &'static str,
    checkpoint_format: &'static str,
}

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub role: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    versions: Versions,
    inputs: &'a [InputFile],
    started_unix_ms: u128,
    finished_unix_ms: u128,
    outputs: &'a [String],
    summary: &'a serde_json::Value,
}

/// The single writer for one command's output directory.
pub struct OutputDir {
    dir: PathBuf,
    command: String,
    started: u128,
    files: Vec<String>,
    inputs: Vec<InputFile>,
    pub summary: serde_json::Value,
}

impl OutputDir {
    pub fn create(dir: &Path, command: &str) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            started: now_ms(),
            files: Vec::new(),
            inputs: Vec::new(),
            summary: serde_json::Value::Object(Default::default()),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> std::io::Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn record_input(&mut self, role: &str, bytes: &[u8]) {
        self.inputs.push(InputFile {
            role: role.to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn set_summary(&mut self, key: &str, value: serde_json::Value) {
        if let serde_json::Value::Object(map) = &mut self.summary {
            map.insert(key.to_string(), value);
        }
    }

    /// Writes the canonical config and the manifest.
    pub fn finish(mut self, cfg: &Config) -> std::io::Result<()> {
        self.write("config.toml", &cfg.to_canonical_string())?;
        let manifest = Manifest {
            command: &self.command,
            config_hash: cfg.hash(),
            seed: cfg.rng.seed,
            versions: Versions {
                bonlab: env!("CARGO_PKG_VERSION"),
                benchmark_format: "bonlab-benchmark v1",
                checkpoint_format: "bonlab-policy v1",
            },
            inputs: &self.inputs,
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
            outputs: &self.files,
            summary: &self.summary,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        std::fs::write(self.dir.join(MANIFEST_FILE), text + "\n")
    }
}
