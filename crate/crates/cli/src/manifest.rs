//! Run manifests: enough provenance to reproduce a command byte-for-byte.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

/// Provenance of one CLI run; the hash covers every input that affects the
/// outputs (input file bytes, arguments and seeds).
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    pub content_hash: String,
}

impl RunManifest {
    pub fn build(
        command: &str,
        args: &[(&str, String)],
        seeds: &[u64],
        input_paths: &[&Path],
        outputs: &[PathBuf],
    ) -> Result<Self, CliError> {
        let mut inputs = Vec::new();
        let mut hasher = Sha256::new();
        hasher.update(command.as_bytes());
        for (k, v) in args {
            hasher.update(k.as_bytes());
            hasher.update(v.as_bytes());
        }
        for s in seeds {
            hasher.update(s.to_le_bytes());
        }
        for path in input_paths {
            let bytes = std::fs::read(path)
                .map_err(|e| CliError::runtime(format!("cannot read input {}: {e}", path.display())))?;
            let digest = Sha256::digest(&bytes);
            hasher.update(&digest);
            inputs.push(InputRecord {
                path: path.display().to_string(),
                sha256: hex(&digest),
            });
        }
        let content_hash = hex(&hasher.finalize());
        Ok(RunManifest {
            command: command.to_string(),
            args: args.iter().map(|(k, v)| format!("{k}={v}")).collect(),
            seeds: seeds.to_vec(),
            inputs,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            content_hash,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut doc = serde_json::to_string_pretty(self).expect("manifest serializes");
        doc.push('\n');
        crate::write_text(path, &doc)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
