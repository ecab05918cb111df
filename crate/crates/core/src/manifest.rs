//! Run manifests: digests of every input and output of a run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::File { path: path.to_path_buf(), source: Box::new(e.into()) })?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub engine_version: String,
    /// SHA-256 of the canonical run configuration.
    pub config_hash: String,
    pub config: String,
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the output directory) to digest.
    pub outputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    /// Excluded from verification.
    pub timestamp_unix: u64,
}

impl RunManifest {
    pub fn new(config: impl Into<String>, seed: Option<u64>) -> Self {
        let config = config.into();
        RunManifest {
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: sha256_hex(config.as_bytes()),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed,
            timestamp_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn add_output(&mut self, dir: &Path, name: &str) -> Result<()> {
        let digest = file_digest(&dir.join(name))?;
        self.outputs.insert(name.to_string(), digest);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").map_err(|e| Error::File { path: path.clone(), source: Box::new(e.into()) })?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::File { path: path.to_path_buf(), source: Box::new(e.into()) })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Recomputes every output digest under `dir` and the config hash.
    /// Returns the names that no longer match.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut stale = Vec::new();
        if sha256_hex(self.config.as_bytes()) != self.config_hash {
            stale.push("config".to_string());
        }
        for (name, digest) in &self.outputs {
            match file_digest(&dir.join(name)) {
                Ok(d) if &d == digest => {}
                _ => stale.push(name.clone()),
            }
        }
        Ok(stale)
    }

    /// Equal apart from the timestamp.
    pub fn same_run(&self, other: &RunManifest) -> bool {
        RunManifest { timestamp_unix: 0, ..self.clone() } == RunManifest { timestamp_unix: 0, ..other.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn round_trip_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "x\n1\n").unwrap();
        let mut m = RunManifest::new("seed=1", Some(1));
        m.add_output(dir.path(), "a.csv").unwrap();
        let path = m.write(dir.path()).unwrap();
        let back = RunManifest::read(&path).unwrap();
        assert_eq!(back, m);
        assert!(back.verify(dir.path()).unwrap().is_empty());
        fs::write(dir.path().join("a.csv"), "x\n2\n").unwrap();
        assert_eq!(back.verify(dir.path()).unwrap(), vec!["a.csv".to_string()]);
        let mut later = m.clone();
        later.timestamp_unix += 5;
        assert!(later.same_run(&m));
    }
}
