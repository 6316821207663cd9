//! Content-addressed disk cache for (prompt -> description) and
//! (text -> embedding) results, so interrupted or repeated runs never redo
//! completed endpoint work.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(DiskCache { dir })
    }

    pub fn content_key(content: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(content.as_bytes());
        hex::encode(hasher.finalize())
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        std::fs::read_to_string(self.entry_path(key)).ok()
    }

    pub fn put(&self, key: &str, payload: &str) -> Result<()> {
        let path = self.entry_path(key);
        // write-then-rename keeps entries atomic under interruption
        let tmp = self.dir.join(format!("{key}.tmp"));
        std::fs::write(&tmp, payload).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

/// Hashes a file's bytes; used by the stage manifest.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::open(dir.path().join("cache")).unwrap();
        let key = DiskCache::content_key("some prompt");
        assert!(cache.get(&key).is_none());
        cache.put(&key, "{\"text\":\"hello\"}").unwrap();
        assert_eq!(cache.get(&key).unwrap(), "{\"text\":\"hello\"}");
    }

    #[test]
    fn keys_depend_on_content_only() {
        assert_eq!(DiskCache::content_key("x"), DiskCache::content_key("x"));
        assert_ne!(DiskCache::content_key("x"), DiskCache::content_key("y"));
    }
}
