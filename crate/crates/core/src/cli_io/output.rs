//! Versioned output directories with a single-writer lock and a manifest
//! of file digests.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Lock file held while a command writes into a directory.
pub const LOCK_FILE: &str = ".lock";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ERROR_FILE: &str = "error.json";
/// Layout version of output directories.
pub const OUTPUT_VERSION: u32 = 1;

/// SHA-256 of a file, hex encoded.
pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Written last by every successful command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub package_version: String,
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub files: BTreeMap<String, String>,
}

/// Machine-readable failure record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

impl ErrorRecord {
    pub fn from_error(e: &Error) -> Self {
        Self { kind: e.kind().into(), message: e.to_string(), exit_code: e.exit_code() }
    }
}

/// An output directory locked for writing; the lock is released on drop.
#[derive(Debug)]
pub struct OutputDir {
    path: PathBuf,
}

impl OutputDir {
    /// Creates (if needed) and locks `path`. Fails if another writer holds it.
    pub fn lock(path: &Path) -> Result<Self> {
        fs::create_dir_all(path)?;
        let lock = path.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Error::Config(format!("{} is locked by another writer (remove {} if stale)", path.display(), lock.display())));
            }
            Err(e) => return Err(e.into()),
        }
        let _ = fs::remove_file(path.join(ERROR_FILE));
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        fs::write(self.file(name), text)?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// Hashes every regular file except the lock, error record and manifest.
    pub fn write_manifest(&self, command: &str, config_digest: &str, seed: u64) -> Result<Manifest> {
        let mut files = BTreeMap::new();
        let mut names: Vec<String> = fs::read_dir(&self.path)?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n != LOCK_FILE && n != MANIFEST_FILE && n != ERROR_FILE && !n.ends_with(".tmp"))
            .collect();
        names.sort();
        for n in names {
            files.insert(n.clone(), sha256_file(&self.file(&n))?);
        }
        let m = Manifest {
            version: OUTPUT_VERSION,
            package_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_digest: config_digest.into(),
            seed,
            files,
        };
        self.write_json(MANIFEST_FILE, &m)?;
        Ok(m)
    }

    pub fn write_error(&self, e: &Error) -> Result<()> {
        self.write_json(ERROR_FILE, &ErrorRecord::from_error(e))
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.path.join(LOCK_FILE));
    }
}

/// Reads a manifest and checks every listed digest.
pub fn verify_manifest(dir: &Path) -> Result<Manifest> {
    let m: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    for (name, digest) in &m.files {
        if sha256_file(&dir.join(name))? != *digest {
            return Err(Error::Checkpoint(format!("{name} does not match its manifest digest")));
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::lock(dir.path()).unwrap();
        assert!(OutputDir::lock(dir.path()).is_err());
        out.write_text("a.csv", "x\n1\n").unwrap();
        let m = out.write_manifest("test", "abc", 3).unwrap();
        assert_eq!(m.files.len(), 1);
        drop(out);
        assert!(!dir.path().join(LOCK_FILE).exists());
        verify_manifest(dir.path()).unwrap();
        fs::write(dir.path().join("a.csv"), "x\n2\n").unwrap();
        assert!(verify_manifest(dir.path()).is_err());
    }
}
