use super::ScoreValue;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub content_hash: String,
    pub model_name: String,
    pub score: ScoreValue,
    pub raw_response: String,
    /// RFC 3339 UTC timestamp.
    pub retrieved_at: String,
}

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cache {}:{line}: {reason}", path.display())]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

/// Append-only JSON-lines score cache keyed by `(content_hash, model_name)`.
///
/// Reads go through an in-memory index; writes are serialized through a single
/// file handle. The first entry recorded for a key wins.
#[derive(Debug, Default)]
pub struct ScoreCache {
    path: Option<PathBuf>,
    index: RwLock<HashMap<(String, String), CacheEntry>>,
    writer: Mutex<Option<File>>,
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (creating if needed) a cache file and load its entries.
    pub fn open(path: &Path) -> Result<Self, CacheError> {
        let io = |source| CacheError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut index = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line).map_err(|e| CacheError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: e.to_string(),
                })?;
                index
                    .entry((entry.content_hash.clone(), entry.model_name.clone()))
                    .or_insert(entry);
            }
        } else if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(io)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            index: RwLock::new(index),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn get(&self, content_hash: &str, model_name: &str) -> Option<CacheEntry> {
        self.index
            .read()
            .expect("cache index poisoned")
            .get(&(content_hash.to_string(), model_name.to_string()))
            .cloned()
    }

    /// Record an entry. Returns `false` (and writes nothing) when the key is
    /// already present.
    pub fn insert(&self, entry: CacheEntry) -> Result<bool, CacheError> {
        let key = (entry.content_hash.clone(), entry.model_name.clone());
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        {
            let index = self.index.read().expect("cache index poisoned");
            if index.contains_key(&key) {
                return Ok(false);
            }
        }
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_string(&entry).expect("cache entry serializes");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| CacheError::Io {
                    path: self.path.clone().unwrap_or_default(),
                    source,
                })?;
        }
        self.index.write().expect("cache index poisoned").insert(key, entry);
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("cache index poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
