//! Append-only JSONL files shared by the caches, archives and the survey store.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::collections::BTreeMap;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reads every record; a missing file reads as empty.
pub fn read_or_empty<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    crate::corpus::read_jsonl(path)
}

pub fn write_all<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it)?;
        out.push(b'\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    crate::corpus::write_atomic(path, &out)
}

/// Serialized line appender. Each record is written and flushed as one line.
#[derive(Debug)]
pub struct Appender {
    path: PathBuf,
    file: Mutex<File>,
}

impl Appender {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Appender {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append<T: Serialize>(&self, record: &T) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let mut f = self.file.lock().unwrap();
        f.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        f.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// A content-keyed record store persisted as JSONL sorted by key, so the
/// file bytes do not depend on insertion order.
#[derive(Debug)]
pub struct KeyedStore<T> {
    path: Option<PathBuf>,
    map: RwLock<BTreeMap<String, T>>,
}

impl<T> Default for KeyedStore<T> {
    fn default() -> Self {
        KeyedStore {
            path: None,
            map: RwLock::new(BTreeMap::new()),
        }
    }
}

impl<T: Clone + Serialize + for<'de> Deserialize<'de>> KeyedStore<T> {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads existing records from `path`; `key` recomputes each record's key.
    pub fn open(path: impl Into<PathBuf>, key: impl Fn(&T) -> String) -> Result<Self> {
        let path = path.into();
        let records: Vec<T> = read_or_empty(&path)?;
        let map = records.into_iter().map(|r| (key(&r), r)).collect();
        Ok(KeyedStore {
            path: Some(path),
            map: RwLock::new(map),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<T> {
        self.map.read().unwrap().get(key).cloned()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.read().unwrap().contains_key(key)
    }

    /// Inserts unless present; returns the stored record either way.
    pub fn insert(&self, key: String, record: T) -> T {
        self.map
            .write()
            .unwrap()
            .entry(key)
            .or_insert(record)
            .clone()
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> Vec<T> {
        self.map.read().unwrap().values().cloned().collect()
    }

    /// Rewrites the backing file. No-op for in-memory stores.
    pub fn persist(&self) -> Result<()> {
        match &self.path {
            Some(p) => write_all(p, &self.values()),
            None => Ok(()),
        }
    }
}
