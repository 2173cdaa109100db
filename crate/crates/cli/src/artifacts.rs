//! Atomic artifact writing with content hashes, and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use archetype_core::io::write_atomic;
use archetype_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes files under one root and remembers the hash of each.
#[derive(Debug)]
pub struct ArtifactSet {
    root: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl ArtifactSet {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            hashes: BTreeMap::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(rel), bytes)?;
        self.hashes.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    pub fn write_csv(&mut self, rel: &str, render: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        render(&mut buf)?;
        self.write(rel, &buf)
    }

    /// Hashes a file that some other writer already placed under the root.
    pub fn record(&mut self, rel: &str) -> Result<()> {
        let p = self.path(rel);
        let bytes = fs::read(&p).map_err(|e| Error::Io { path: p, source: e })?;
        self.hashes.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn hashes(&self) -> &BTreeMap<String, String> {
        &self.hashes
    }

    /// Hash over every recorded `(path, hash)` pair in path order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (rel, digest) in &self.hashes {
            h.update(rel.as_bytes());
            h.update([0u8]);
            h.update(digest.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Writes `manifest.json`, which lists every artifact written so far.
    pub fn finish(mut self, mut manifest: Manifest) -> Result<Manifest> {
        manifest.artifacts = self.hashes.clone();
        manifest.content_hash = self.content_hash();
        self.write_json("manifest.json", &manifest)?;
        Ok(manifest)
    }
}

/// Everything needed to tell two runs apart. Contains no timestamps, so
/// identical inputs give a byte-identical manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub layout_version: String,
    /// The effective configuration after command-line overrides.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub data: DataSummary,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub results: BTreeMap<String, serde_json::Value>,
    pub artifacts: BTreeMap<String, String>,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DataSummary {
    pub source: String,
    pub sites: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropped_short: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_sites: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_sites: Option<usize>,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value, data: DataSummary) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            layout_version: archetype_core::LAYOUT_VERSION.to_string(),
            config,
            seeds: BTreeMap::new(),
            data,
            results: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            content_hash: String::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn content_hash_depends_on_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ArtifactSet::new(dir.path().join("a"));
        a.write("x.txt", b"1").unwrap();
        a.write("y.txt", b"2").unwrap();
        let mut b = ArtifactSet::new(dir.path().join("b"));
        b.write("x.txt", b"1").unwrap();
        b.write("y.txt", b"3").unwrap();
        assert_ne!(a.content_hash(), b.content_hash());

        let mut c = ArtifactSet::new(dir.path().join("c"));
        c.write("y.txt", b"2").unwrap();
        c.write("x.txt", b"1").unwrap();
        assert_eq!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn manifest_lists_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ArtifactSet::new(dir.path());
        a.write("x.txt", b"1").unwrap();
        let m = a
            .finish(Manifest::new("run", serde_json::json!({}), DataSummary::default()))
            .unwrap();
        assert_eq!(m.artifacts.len(), 1);
        let text = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(text.contains(&m.content_hash));
    }
}
