use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Sidecar describing how an output file was produced. It lives next to the
/// output as `<out>.manifest.json` so the output itself stays byte-stable.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub inputs: Vec<InputDigest>,
    pub config: Value,
    pub config_hash: String,
    pub tool_version: &'static str,
    pub started_unix_secs: u64,
    pub duration_secs: f64,
    pub warnings: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub struct Recorder {
    command: &'static str,
    started: Instant,
    started_unix_secs: u64,
    inputs: Vec<InputDigest>,
    pub warnings: Vec<String>,
}

impl Recorder {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
            started_unix_secs: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            inputs: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    /// Reads a file and records its digest.
    pub fn read(&mut self, path: &Path) -> Result<String> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.input(path, text.as_bytes());
        Ok(text)
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{message}");
        self.warnings.push(message);
    }

    pub fn finish(self, out: &Path, config: Value) -> Result<()> {
        let config_hash = sha256_hex(config.to_string().as_bytes());
        let manifest = RunManifest {
            command: self.command.to_string(),
            args: std::env::args().skip(1).collect(),
            inputs: self.inputs,
            config,
            config_hash,
            tool_version: env!("CARGO_PKG_VERSION"),
            started_unix_secs: self.started_unix_secs,
            duration_secs: self.started.elapsed().as_secs_f64(),
            warnings: self.warnings,
        };
        let path = sidecar_path(out);
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}
