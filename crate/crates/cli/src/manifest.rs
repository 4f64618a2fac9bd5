use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Written beside every output; enough to re-run the command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub wall_clock_secs: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Recorder {
    command: &'static str,
    start: Instant,
}

impl Recorder {
    pub fn start(command: &'static str) -> Self {
        Self { command, start: Instant::now() }
    }

    /// Hashes `inputs` and writes the manifest to `path`.
    pub fn finish<C: Serialize>(self, path: &Path, config: &C, inputs: &[&Path], seed: Option<u64>) -> Result<()> {
        let inputs = inputs
            .iter()
            .map(|p| Ok(InputHash { path: p.to_path_buf(), sha256: sha256_file(p)? }))
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: serde_json::to_value(config)?,
            inputs,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_secs: self.start.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// `out.json` -> `out.json.manifest.json`
pub fn beside(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}
