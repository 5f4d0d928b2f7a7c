use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Content-addressed JSON memoization on disk.
///
/// Keys are hashed from their JSON encoding. Writes go to a temporary file in
/// the same directory and are renamed into place, so readers never observe a
/// partial entry and concurrent writers of the same key resolve to the last
/// rename.
#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn open(dir: impl AsRef<Path>) -> io::Result<Self> {
        std::fs::create_dir_all(dir.as_ref())?;
        Ok(Self {
            dir: dir.as_ref().to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &impl Serialize) -> PathBuf {
        let encoded = serde_json::to_vec(key).expect("cache keys are plain data");
        let digest = Sha256::digest(&encoded);
        self.dir.join(format!("{}.json", hex::encode(digest)))
    }

    /// `None` on a miss or an unreadable entry.
    pub fn get<T: DeserializeOwned>(&self, key: &impl Serialize) -> Option<T> {
        let bytes = std::fs::read(self.path_for(key)).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("ignoring corrupt cache entry: {e}");
                None
            }
        }
    }

    pub fn put<T: Serialize>(&self, key: &impl Serialize, value: &T) -> io::Result<()> {
        let path = self.path_for(key);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        serde_json::to_writer(&mut tmp, value)?;
        tmp.flush()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}
