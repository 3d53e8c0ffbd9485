//! Run manifests: the resolved command line, input hashes and output paths,
//! written before any other output of a command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Cli;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Every argument with defaults filled in.
    pub config: serde_json::Value,
    pub seed: u64,
    pub tool_version: String,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).unwrap_or(&p).to_path_buf());
        }
    }
    Ok(())
}

/// SHA-256 of a file, or of a directory as its sorted relative paths and contents.
pub fn hash_path(path: &Path) -> CliResult<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files).map_err(|e| CliError::io(path, e))?;
        files.sort();
        for rel in files {
            let full = path.join(&rel);
            let bytes = std::fs::read(&full).map_err(|e| CliError::io(&full, e))?;
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0u8]);
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    } else {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

impl RunManifest {
    pub fn new(cli: &Cli, inputs: &[&Path], outputs: &[&Path]) -> CliResult<Self> {
        let config = serde_json::to_value(cli).expect("arguments serialize");
        let command = config["command"]
            .as_object()
            .and_then(|o| o.keys().next().cloned())
            .unwrap_or_default();
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputHash {
                    path: p.display().to_string(),
                    sha256: hash_path(p)?,
                })
            })
            .collect::<CliResult<_>>()?;
        Ok(RunManifest {
            command,
            config,
            seed: cli.global.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Write to `--manifest` if given, else to `default`; with neither, log it.
    pub fn write(&self, explicit: Option<&Path>, default: Option<&Path>) -> CliResult<()> {
        let Some(path) = explicit.or(default) else {
            log::info!("run manifest: {}", self.to_json());
            return Ok(());
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()).map_err(|e| CliError::io(path, e))
    }
}

/// `<path>.manifest.json`.
pub fn beside(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
