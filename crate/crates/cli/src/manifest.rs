//! Run manifests: the resolved configuration of a run together with SHA-256
//! digests of everything it read and wrote.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "gcnstab-run/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// Input files as named in the configuration.
    pub inputs: Vec<FileDigest>,
    /// Output files relative to the output directory.
    pub outputs: Vec<FileDigest>,
    /// `ok`, or the verification failure that set exit code 2.
    pub status: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT {
            return Err(CliError::Usage(format!(
                "{}: unsupported manifest format `{}`",
                path.display(),
                m.format
            )));
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// Inputs whose current digest differs from the recorded one.
    pub fn changed_inputs(&self) -> Result<Vec<String>> {
        let mut changed = Vec::new();
        for d in &self.inputs {
            if digest_file(Path::new(&d.path))?.sha256 != d.sha256 {
                changed.push(d.path.clone());
            }
        }
        Ok(changed)
    }

    /// Outputs missing from `other` or with a different digest.
    pub fn mismatched_outputs(&self, other: &RunManifest) -> Vec<String> {
        let mut out: Vec<String> = self
            .outputs
            .iter()
            .filter(|d| !other.outputs.contains(d))
            .map(|d| d.path.clone())
            .collect();
        out.extend(
            other
                .outputs
                .iter()
                .filter(|d| !self.outputs.iter().any(|x| x.path == d.path))
                .map(|d| d.path.clone()),
        );
        out
    }
}
