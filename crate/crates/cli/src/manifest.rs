//! Append-or-replace stage ledger in JSON Lines, plus content hashing.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub output_hash: String,
}

#[derive(Debug)]
pub struct Manifest {
    path: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Loads the manifest of `work_dir`; a missing file is an empty manifest.
    pub fn load(work_dir: &Path) -> CliResult<Self> {
        let path = work_dir.join(MANIFEST_FILE);
        let entries = match fs::read_to_string(&path) {
            Ok(text) => text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| serde_json::from_str(l).map_err(|e| CliError::Config(format!("corrupt manifest {}: {e}", path.display()))))
                .collect::<CliResult<Vec<_>>>()?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(CliError::io(&path, e)),
        };
        Ok(Manifest { path, entries })
    }

    pub fn get(&self, stage: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.stage == stage)
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    /// Replaces the entry of the same stage in place, or appends, then
    /// rewrites the file.
    pub fn record(&mut self, entry: ManifestEntry) -> CliResult<()> {
        match self.entries.iter_mut().find(|e| e.stage == entry.stage) {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
        let mut text = String::new();
        for e in &self.entries {
            text.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
            text.push('\n');
        }
        let tmp = self.path.with_extension("jsonl.tmp");
        fs::write(&tmp, text).map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, &self.path).map_err(|e| CliError::io(&self.path, e))
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON encoding of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    hash_bytes(&serde_json::to_vec(value).expect("hash input serializes"))
}

pub fn hash_file(path: &Path) -> CliResult<String> {
    let mut f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Hash over the names (relative to `root`) and contents of `files`, in order.
pub fn hash_outputs(root: &Path, files: &[PathBuf]) -> CliResult<String> {
    let mut hasher = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(root).unwrap_or(f);
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0]);
        hasher.update(hash_file(f)?.as_bytes());
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(stage: &str, h: &str) -> ManifestEntry {
        ManifestEntry { stage: stage.into(), config_hash: h.into(), seed: 1, output_hash: "o".into() }
    }

    #[test]
    fn record_replaces_in_place() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::load(dir.path()).unwrap();
        assert!(m.entries().is_empty());
        m.record(entry("a", "1")).unwrap();
        m.record(entry("b", "1")).unwrap();
        m.record(entry("a", "2")).unwrap();
        let back = Manifest::load(dir.path()).unwrap();
        assert_eq!(back.entries(), &[entry("a", "2"), entry("b", "1")]);
    }

    #[test]
    fn output_hash_sees_names_and_contents() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        fs::write(&a, "x").unwrap();
        fs::write(&b, "x").unwrap();
        let ha = hash_outputs(dir.path(), std::slice::from_ref(&a)).unwrap();
        assert_ne!(ha, hash_outputs(dir.path(), std::slice::from_ref(&b)).unwrap());
        fs::write(&a, "y").unwrap();
        assert_ne!(ha, hash_outputs(dir.path(), std::slice::from_ref(&a)).unwrap());
        assert_eq!(hash_bytes(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
