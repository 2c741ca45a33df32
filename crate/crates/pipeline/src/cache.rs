//! Content-addressed stage cache guarded by an advisory lock file.

use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use afford_core::Error;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

pub const LOCK_FILE: &str = ".lock";

/// Hex SHA-256 of length-prefixed parts, so part boundaries matter.
pub fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    format!("{:x}", h.finalize())
}

/// Digest of every file below `root`, by relative path and content.
pub fn hash_tree(root: &Path) -> afford_core::Result<String> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in &files {
        let path = root.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::ingestion(&path, e.to_string()))?;
        let name = rel.to_string_lossy();
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(format!("{:x}", h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> afford_core::Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::ingestion(dir, e.to_string()))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::ingestion(dir, e.to_string()))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("walk stays under root").to_path_buf());
        }
    }
    Ok(())
}

/// Cache directory held exclusively for the lifetime of the value.
#[derive(Debug)]
pub struct StageCache {
    dir: PathBuf,
}

impl StageCache {
    /// Creates the directory if needed and takes the lock; fails if another
    /// run holds it.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let lock = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => Ok(StageCache { dir: dir.to_path_buf() }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(PipelineError::Locked(dir.to_path_buf())),
            Err(e) => Err(Error::io(&lock, e).into()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, stage: &str, key: &str) -> PathBuf {
        self.dir.join(stage).join(format!("{key}.json"))
    }

    pub fn load<A: DeserializeOwned>(&self, stage: &str, key: &str) -> Result<Option<A>> {
        let path = self.path(stage, key);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some(afford_core::persist::parse_artifact(&text)?)),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(&path, e).into()),
        }
    }

    pub fn store<A: Serialize>(&self, stage: &str, key: &str, artifact: &A) -> Result<()> {
        let path = self.path(stage, key);
        let text = serde_json::to_string(artifact)
            .map_err(|e| Error::Validation(format!("cannot serialize {stage} artifact: {e}")))?;
        fs::create_dir_all(path.parent().expect("stage dir")).map_err(|e| Error::io(&path, e))?;
        // Write then rename so a crash never leaves a truncated artifact behind.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

impl Drop for StageCache {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.dir.join(LOCK_FILE));
    }
}
