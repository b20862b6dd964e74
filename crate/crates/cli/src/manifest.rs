//! Run manifests written into every artifact directory.

use std::fs;
use std::path::{Path, PathBuf};

use lunggan_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::settings::Settings;

pub const MANIFEST_FILE: &str = "manifest.json";
/// Resolved settings in config syntax; `--config` accepts it as is.
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: std::collections::BTreeMap<String, String>,
    pub seed: u64,
    pub deterministic: bool,
    pub device: String,
    pub artifacts: Vec<PathBuf>,
    pub version: String,
    /// Git-style blob hash (SHA-256) of the resolved config text.
    pub config_hash: String,
}

/// Hash of `blob <len>\0<content>`, as git computes object ids.
pub fn content_hash(content: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()));
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_manifest(
    out: &Path,
    command: &str,
    settings: &Settings,
    seed: u64,
    deterministic: bool,
    device: &str,
    artifacts: &[PathBuf],
) -> Result<RunManifest> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let text = settings.to_config_text();
    let resolved = out.join(RESOLVED_CONFIG_FILE);
    fs::write(&resolved, &text).map_err(|e| Error::io(&resolved, e))?;
    let manifest = RunManifest {
        command: command.to_string(),
        config: settings.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        seed,
        deterministic,
        device: device.to_string(),
        artifacts: artifacts
            .iter()
            .map(|p| p.strip_prefix(out).unwrap_or(p).to_path_buf())
            .collect(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: content_hash(&text),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format("manifest", e.to_string()))?;
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        assert_eq!(content_hash("a = 1\n"), content_hash("a = 1\n"));
        assert_ne!(content_hash("a = 1\n"), content_hash("a = 2\n"));
        assert_eq!(content_hash("").len(), 64);
    }
}
