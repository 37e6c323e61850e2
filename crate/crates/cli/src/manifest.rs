//! Run directories and the manifest written into each of them.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run.json";

/// `out` itself when it is absent or empty, otherwise the first free
/// `out-1`, `out-2`, ... so earlier runs are never overwritten.
pub fn create_run_dir(out: &Path) -> Result<PathBuf> {
    let free = |p: &Path| -> Result<bool> {
        Ok(!p.exists() || (p.is_dir() && fs::read_dir(p)?.next().is_none()))
    };
    let mut candidate = out.to_path_buf();
    let mut n = 0;
    while !free(&candidate)? {
        n += 1;
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(format!("-{n}"));
        candidate = out.with_file_name(name);
    }
    fs::create_dir_all(&candidate).with_context(|| format!("creating {}", candidate.display()))?;
    Ok(candidate)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved parameters of the run.
    pub config: serde_json::Value,
    pub seed: u64,
    /// SHA-256 tree hash over every input file.
    pub input_hash: String,
    pub tool_version: String,
    pub wall_ms: u64,
    /// Files written, relative to the run directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.file_name().is_some_and(|n| n == MANIFEST_FILE) {
                continue;
            }
            collect_files(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Git-style content hash: each file is hashed as a blob, then the sorted
/// list of `(blob hash, path relative to its input root)` lines is hashed.
/// Manifests of earlier runs are skipped.
pub fn input_hash(inputs: &[&Path]) -> Result<String> {
    let mut lines = Vec::new();
    for root in inputs {
        let mut files = Vec::new();
        collect_files(root, &mut files)?;
        for f in files {
            let bytes = fs::read(&f).with_context(|| format!("reading {}", f.display()))?;
            let rel = f.strip_prefix(root).unwrap_or(&f);
            let name = root.file_name().map(Path::new).unwrap_or(Path::new("")).join(rel);
            lines.push(format!("{} {}\n", blob_hash(&bytes), name.display()));
        }
    }
    lines.sort();
    let mut h = Sha256::new();
    for l in &lines {
        h.update(l.as_bytes());
    }
    Ok(hex(&h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffix_increments() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("run");
        assert_eq!(create_run_dir(&out).unwrap(), out);
        fs::write(out.join("x"), b"1").unwrap();
        assert_eq!(create_run_dir(&out).unwrap(), tmp.path().join("run-1"));
        fs::write(tmp.path().join("run-1/x"), b"1").unwrap();
        assert_eq!(create_run_dir(&out).unwrap(), tmp.path().join("run-2"));
    }

    #[test]
    fn blob_hash_matches_git() {
        assert_eq!(blob_hash(b"hello\n").len(), 64);
        assert_eq!(
            blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn hash_ignores_manifest_and_tracks_content() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path().join("d");
        fs::create_dir(&d).unwrap();
        fs::write(d.join("a"), b"1").unwrap();
        let h1 = input_hash(&[&d]).unwrap();
        fs::write(d.join(MANIFEST_FILE), b"{}").unwrap();
        assert_eq!(input_hash(&[&d]).unwrap(), h1);
        fs::write(d.join("a"), b"2").unwrap();
        assert_ne!(input_hash(&[&d]).unwrap(), h1);
    }
}
