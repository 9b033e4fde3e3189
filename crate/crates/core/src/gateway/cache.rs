//! Content-addressed response cache.
//!
//! In memory always; optionally mirrored to a directory holding one
//! `<digest>.json` line record per entry. Concurrent writers of the same key
//! write identical values, so last-writer-wins is harmless.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::TargetScore;
use crate::dataset::lines::{decode_line, encode_line, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CachedResponse {
    Completion {
        text: String,
        #[serde(default)]
        total_logprob: Option<f64>,
    },
    Score(TargetScore),
    Reward {
        value: f64,
    },
}

/// On-disk form of one cache entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub request: serde_json::Value,
    pub response: CachedResponse,
    /// Seconds since the Unix epoch at write time; informational only.
    pub timestamp: u64,
}

#[derive(Debug, Default)]
pub struct ResponseCache {
    mem: Mutex<HashMap<String, CachedResponse>>,
    dir: Option<PathBuf>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            mem: Mutex::default(),
            dir: Some(dir),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn entry_path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    pub fn len(&self) -> usize {
        self.mem.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Result<Option<CachedResponse>, String> {
        if let Some(hit) = self.mem.lock().unwrap_or_else(|e| e.into_inner()).get(key) {
            return Ok(Some(hit.clone()));
        }
        let Some(path) = self.entry_path(key) else {
            return Ok(None);
        };
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(format!("{}: {e}", path.display())),
        };
        let record: CacheRecord = decode_line(text.trim_end())
            .map_err(|(field, msg)| format!("{}: field `{field}`: {msg}", path.display()))?;
        if record.key != key {
            return Err(format!("{}: key mismatch", path.display()));
        }
        self.mem
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key.to_owned(), record.response.clone());
        Ok(Some(record.response))
    }

    pub fn put(&self, key: &str, request: serde_json::Value, response: CachedResponse) -> Result<(), String> {
        if let Some(path) = self.entry_path(key) {
            let record = CacheRecord {
                key: key.to_owned(),
                request,
                response: response.clone(),
                timestamp: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            };
            let mut line = encode_line(&record).map_err(|e| e.to_string())?;
            line.push('\n');
            write_atomic(&path, line.as_bytes()).map_err(|e| e.to_string())?;
        }
        self.mem
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key.to_owned(), response);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_cache_survives_a_new_instance() {
        let dir = tempfile::tempdir().unwrap();
        let resp = CachedResponse::Completion {
            text: "Paris".into(),
            total_logprob: Some(-0.25),
        };
        {
            let cache = ResponseCache::on_disk(dir.path()).unwrap();
            cache.put("abc", serde_json::json!({"q": 1}), resp.clone()).unwrap();
        }
        let fresh = ResponseCache::on_disk(dir.path()).unwrap();
        assert!(fresh.is_empty());
        assert_eq!(fresh.get("abc").unwrap(), Some(resp));
        assert_eq!(fresh.get("missing").unwrap(), None);
        let text = fs::read_to_string(dir.path().join("abc.json")).unwrap();
        for field in ["\"key\"", "\"request\"", "\"response\"", "\"timestamp\""] {
            assert!(text.contains(field), "{text}");
        }
    }
}
