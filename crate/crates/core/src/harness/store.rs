//! Content-addressed stage directories.
//!
//! Each stage writes into `<out>/<stage>/<key prefix>/` and finishes by
//! writing `stage.json` with the key and the SHA-256 of every file. A
//! directory is reused only when its marker matches the key and every file
//! still hashes to the recorded value.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::digest::{sha256_hex, short};
use crate::error::{Error, Result};

pub const MARKER: &str = "stage.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageMarker {
    pub stage: String,
    pub key: String,
    pub config_hash: String,
    pub seed: u64,
    /// Relative path to SHA-256.
    pub files: BTreeMap<String, String>,
}

/// Hashes of all files below `dir` except the marker, keyed by relative
/// path with `/` separators.
pub fn hash_files(dir: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
                continue;
            }
            let rel: Vec<String> = path
                .strip_prefix(root)
                .expect("walked path is below root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect();
            let rel = rel.join("/");
            if rel == MARKER {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            out.insert(rel, sha256_hex(&bytes));
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    config_hash: String,
    seed: u64,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>, config_hash: impl Into<String>, seed: u64) -> Self {
        Store {
            root: root.into(),
            config_hash: config_hash.into(),
            seed,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, stage: &str, key: &str) -> PathBuf {
        self.root.join(stage).join(short(key))
    }

    /// Whether `dir` holds a sealed, intact result for `key`.
    pub fn is_complete(&self, dir: &Path, key: &str) -> bool {
        let Ok(text) = fs::read_to_string(dir.join(MARKER)) else {
            return false;
        };
        let Ok(marker) = serde_json::from_str::<StageMarker>(&text) else {
            return false;
        };
        marker.key == key && hash_files(dir).is_ok_and(|files| files == marker.files)
    }

    /// Clear any partial content and create `dir`.
    pub fn begin(&self, dir: &Path) -> Result<()> {
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
    }

    pub fn seal(&self, dir: &Path, stage: &str, key: &str) -> Result<()> {
        let marker = StageMarker {
            stage: stage.to_string(),
            key: key.to_string(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            files: hash_files(dir)?,
        };
        let p = dir.join(MARKER);
        let json = serde_json::to_string_pretty(&marker).expect("marker serializes");
        fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seal_and_detect_tampering() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::new(tmp.path(), "cfg", 3);
        let dir = store.dir("models", "abcdef0123456789ffff");
        assert!(dir.ends_with("models/abcdef0123456789"));
        store.begin(&dir).unwrap();
        fs::write(dir.join("a.txt"), "one").unwrap();
        fs::create_dir_all(dir.join("sub")).unwrap();
        fs::write(dir.join("sub/b.txt"), "two").unwrap();
        assert!(!store.is_complete(&dir, "k"));
        store.seal(&dir, "models", "k").unwrap();
        assert!(store.is_complete(&dir, "k"));
        assert!(!store.is_complete(&dir, "other"));
        let files = hash_files(&dir).unwrap();
        assert_eq!(files.keys().collect::<Vec<_>>(), vec!["a.txt", "sub/b.txt"]);
        fs::write(dir.join("a.txt"), "changed").unwrap();
        assert!(!store.is_complete(&dir, "k"));
    }
}
