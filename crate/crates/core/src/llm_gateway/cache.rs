//! Append-only, content-addressed response cache.
//!
//! One JSON record per line. Each record is written with a single
//! `write_all` on an `O_APPEND` handle, so concurrent writers (threads or
//! processes) interleave whole lines. Lines that fail to parse, such as a
//! torn final line after a crash, are skipped on load.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CompletionRequest, CompletionResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub created_at: u64,
    pub value: CompletionResult,
}

/// Hex SHA-256 over the request fields that determine the completion.
pub fn request_digest(request: &CompletionRequest) -> String {
    #[derive(Serialize)]
    struct KeyFields<'a> {
        model: &'a str,
        temperature: f64,
        system: &'a str,
        user: &'a str,
    }
    let fields = KeyFields {
        model: &request.model,
        temperature: request.temperature,
        system: &request.system_text,
        user: &request.user_text,
    };
    let bytes = serde_json::to_vec(&fields).expect("key fields serialize");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Default)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheEntry>>,
    // bytes of the backing file already ingested
    offset: Mutex<u64>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a persistent cache. An unusable path degrades to an
    /// in-memory cache with a warning.
    pub fn open(path: impl AsRef<Path>) -> Self {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            if let Err(e) = fs::create_dir_all(parent) {
                log::warn!("cache directory {} unusable ({e}); caching in memory only", parent.display());
                return Self::in_memory();
            }
        }
        if let Err(e) = OpenOptions::new().create(true).append(true).open(&path) {
            log::warn!("cache file {} unwritable ({e}); caching in memory only", path.display());
            return Self::in_memory();
        }
        let cache = Self {
            path: Some(path),
            ..Self::default()
        };
        cache.refresh();
        cache
    }

    pub fn is_persistent(&self) -> bool {
        self.path.is_some()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ingests records appended to the backing file since the last read.
    pub fn refresh(&self) {
        let Some(path) = &self.path else { return };
        let mut offset = self.offset.lock().unwrap();
        let Ok(mut file) = File::open(path) else { return };
        if file.seek(SeekFrom::Start(*offset)).is_err() {
            return;
        }
        let mut buf = Vec::new();
        if file.read_to_end(&mut buf).is_err() {
            return;
        }
        // only whole lines; a partial tail is picked up on a later refresh
        let Some(end) = buf.iter().rposition(|&b| b == b'\n') else { return };
        let mut entries = self.entries.write().unwrap();
        for line in buf[..end].split(|&b| b == b'\n') {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            match serde_json::from_slice::<CacheEntry>(line) {
                Ok(entry) => {
                    entries.entry(entry.key.clone()).or_insert(entry);
                }
                Err(e) => log::warn!("skipping corrupt cache record in {}: {e}", path.display()),
            }
        }
        *offset += end as u64 + 1;
    }

    pub fn lookup(&self, key: &str) -> Option<CompletionResult> {
        if let Some(e) = self.entries.read().unwrap().get(key) {
            return Some(e.value.clone());
        }
        self.refresh();
        self.entries.read().unwrap().get(key).map(|e| e.value.clone())
    }

    pub fn store(&self, key: &str, value: &CompletionResult) {
        let entry = CacheEntry {
            key: key.to_string(),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            value: value.clone(),
        };
        if let Some(path) = &self.path {
            if let Err(e) = append_record(path, &entry) {
                log::warn!("failed to persist cache entry to {}: {e}", path.display());
            }
        }
        self.entries
            .write()
            .unwrap()
            .entry(entry.key.clone())
            .or_insert(entry);
    }
}

fn append_record(path: &Path, entry: &CacheEntry) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(entry)?;
    line.push(b'\n');
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    // a torn record from a crashed writer must not swallow this one
    let len = file.metadata()?.len();
    if len > 0 {
        let mut last = [0u8; 1];
        let mut reader = File::open(path)?;
        reader.seek(SeekFrom::Start(len - 1))?;
        reader.read_exact(&mut last)?;
        if last[0] != b'\n' {
            line.insert(0, b'\n');
        }
    }
    file.write_all(&line)?;
    file.flush()
}
