//! Persistence for accounts and project records.
//!
//! The file store keeps one JSON document per project plus one for the
//! identity store. Every write goes to a temporary file in the same
//! directory and is renamed into place, so a crash leaves either the old or
//! the new version.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use maskfed_core::identity::IdentityStore;

use super::record::ProjectRecord;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("storage I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("stored document {path} is corrupt: {message}")]
    Corrupt { path: String, message: String },
}

#[derive(Debug, Default, Clone)]
pub struct Snapshot {
    pub identity: IdentityStore,
    pub projects: Vec<ProjectRecord>,
}

pub trait Storage: Send + Sync {
    fn load(&self) -> Result<Snapshot, StorageError>;
    fn save_identity(&self, store: &IdentityStore) -> Result<(), StorageError>;
    fn save_project(&self, record: &ProjectRecord) -> Result<(), StorageError>;
}

/// Keeps the last saved copy of everything in memory.
#[derive(Debug, Default)]
pub struct MemoryStorage {
    inner: Mutex<Snapshot>,
}

impl MemoryStorage {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Storage for MemoryStorage {
    fn load(&self) -> Result<Snapshot, StorageError> {
        Ok(self.inner.lock().unwrap_or_else(|e| e.into_inner()).clone())
    }

    fn save_identity(&self, store: &IdentityStore) -> Result<(), StorageError> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).identity = store.clone();
        Ok(())
    }

    fn save_project(&self, record: &ProjectRecord) -> Result<(), StorageError> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        match inner.projects.iter_mut().find(|r| r.config.id == record.config.id) {
            Some(slot) => *slot = record.clone(),
            None => inner.projects.push(record.clone()),
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct FileStorage {
    root: PathBuf,
}

const IDENTITY_FILE: &str = "identity.json";
const PROJECT_DIR: &str = "projects";

impl FileStorage {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StorageError> {
        let root = root.into();
        fs::create_dir_all(root.join(PROJECT_DIR))?;
        Ok(FileStorage { root })
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
        let dir = path.parent().unwrap_or(&self.root);
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| StorageError::Io(e.error))?;
        Ok(())
    }

    fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StorageError> {
        let bytes = fs::read(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| StorageError::Corrupt { path: path.display().to_string(), message: e.to_string() })
    }
}

impl Storage for FileStorage {
    fn load(&self) -> Result<Snapshot, StorageError> {
        let identity_path = self.root.join(IDENTITY_FILE);
        let identity = if identity_path.exists() { Self::read_json(&identity_path)? } else { IdentityStore::new() };
        let mut projects = Vec::new();
        let mut entries: Vec<_> = fs::read_dir(self.root.join(PROJECT_DIR))?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "json") {
                projects.push(Self::read_json(&path)?);
            }
        }
        Ok(Snapshot { identity, projects })
    }

    fn save_identity(&self, store: &IdentityStore) -> Result<(), StorageError> {
        let bytes = serde_json::to_vec_pretty(store).expect("identity store serializes");
        self.write_atomic(&self.root.join(IDENTITY_FILE), &bytes)
    }

    fn save_project(&self, record: &ProjectRecord) -> Result<(), StorageError> {
        let bytes = serde_json::to_vec_pretty(record).expect("project record serializes");
        let name = format!("{}.json", record.config.id);
        self.write_atomic(&self.root.join(PROJECT_DIR).join(name), &bytes)
    }
}
