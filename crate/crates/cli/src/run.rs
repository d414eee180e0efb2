//! Output directory bookkeeping and the digest manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult, RunConfig};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub files: BTreeMap<String, FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// A run directory. Paths handed to it are relative and may not escape it.
pub struct RunDir {
    root: PathBuf,
    files: BTreeMap<String, FileEntry>,
}

impl RunDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path of `rel`, creating parent directories.
    pub fn path(&self, rel: &str) -> CliResult<PathBuf> {
        let p = Path::new(rel);
        if p.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(CliError::Runtime(anyhow::anyhow!(
                "output name {rel:?} leaves the run directory"
            )));
        }
        let full = self.root.join(p);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(full)
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        let p = self.path(rel)?;
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.files.insert(
            rel.to_string(),
            FileEntry {
                bytes: bytes.len() as u64,
                sha256: sha256_hex(bytes),
            },
        );
        Ok(())
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> CliResult<()> {
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(value).context("serialising report")?;
        s.push('\n');
        self.write_text(rel, &s)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, rel: &str, items: &[T]) -> CliResult<()> {
        let s = ppt_core::synthvoice::to_jsonl(items)?;
        self.write_text(rel, &s)
    }

    pub fn finish(mut self, command: &str, config: &RunConfig) -> CliResult<PathBuf> {
        let manifest = Manifest {
            command: command.to_string(),
            config: config.clone(),
            files: self.files.clone(),
        };
        let mut s = serde_json::to_string_pretty(&manifest).context("serialising manifest")?;
        s.push('\n');
        let p = self.path(MANIFEST)?;
        fs::write(&p, s)?;
        self.files.clear();
        Ok(p)
    }
}

/// Re-hashes every file listed in a manifest; returns the mismatches.
pub fn verify_manifest(dir: &Path) -> CliResult<Vec<String>> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Inspect(e.to_string()))?;
    let mut bad = Vec::new();
    for (name, entry) in &m.files {
        match fs::read(dir.join(name)) {
            Ok(b) if b.len() as u64 == entry.bytes && sha256_hex(&b) == entry.sha256 => {}
            _ => bad.push(name.clone()),
        }
    }
    Ok(bad)
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
    fn refuses_to_escape_and_verifies() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::create(dir.path()).unwrap();
        assert!(run.write_text("../x", "no").is_err());
        assert!(run.write_text("/tmp/x", "no").is_err());
        run.write_text("a/b.txt", "hello").unwrap();
        run.finish("test", &RunConfig::default()).unwrap();
        assert!(verify_manifest(dir.path()).unwrap().is_empty());
        fs::write(dir.path().join("a/b.txt"), "changed").unwrap();
        assert_eq!(
            verify_manifest(dir.path()).unwrap(),
            vec!["a/b.txt".to_string()]
        );
    }
}
