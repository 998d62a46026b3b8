use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;
use std::sync::Mutex;

use crate::canonical::sha256_hex;
use crate::persistence::{read_asset, PersistenceError, Project};

/// Content-addressed asset storage.
pub trait AssetStore: Send + Sync {
    /// Stores `bytes` and returns their sha256 digest.
    fn put(&self, bytes: &[u8]) -> Result<String, PersistenceError>;
    fn get(&self, hash: &str) -> Result<Vec<u8>, PersistenceError>;
}

impl AssetStore for Project {
    fn put(&self, bytes: &[u8]) -> Result<String, PersistenceError> {
        self.put_asset(bytes)
    }

    fn get(&self, hash: &str) -> Result<Vec<u8>, PersistenceError> {
        self.read_asset(hash)
    }
}

/// In-memory store for tests and throwaway stories.
#[derive(Debug, Default)]
pub struct MemoryAssets {
    blobs: Mutex<BTreeMap<String, Vec<u8>>>,
}

impl MemoryAssets {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.blobs.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl AssetStore for MemoryAssets {
    fn put(&self, bytes: &[u8]) -> Result<String, PersistenceError> {
        let hash = sha256_hex(bytes);
        self.blobs
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(hash.clone())
            .or_insert_with(|| bytes.to_vec());
        Ok(hash)
    }

    fn get(&self, hash: &str) -> Result<Vec<u8>, PersistenceError> {
        self.blobs
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(hash)
            .cloned()
            .ok_or_else(|| PersistenceError::MissingAsset(hash.to_owned()))
    }
}

/// Reads the assets of a project directory without taking its lock.
#[derive(Debug, Clone)]
pub struct ReadOnlyAssets {
    root: PathBuf,
}

impl ReadOnlyAssets {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl AssetStore for ReadOnlyAssets {
    fn put(&self, _bytes: &[u8]) -> Result<String, PersistenceError> {
        Err(PersistenceError::Io {
            path: self.root.clone(),
            source: io::Error::new(io::ErrorKind::PermissionDenied, "read-only asset view"),
        })
    }

    fn get(&self, hash: &str) -> Result<Vec<u8>, PersistenceError> {
        read_asset(&self.root, hash)
    }
}
