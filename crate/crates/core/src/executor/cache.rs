//! Content-addressed verdict cache.
//!
//! Keys hash everything that can change a verdict: the runner command, the
//! request (source, test payload, timeout) and the resource caps. Entries are
//! kept in memory and appended to a line-delimited file on [`VerdictCache::flush`].

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Verdict;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedOutcome {
    pub verdict: Verdict,
    pub detail: String,
    pub wall_time: f64,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    #[serde(flatten)]
    outcome: CachedOutcome,
}

#[derive(Debug, Default)]
pub struct VerdictCache {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, CachedOutcome>>,
    pending: Mutex<Vec<String>>,
}

impl VerdictCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) a cache file. Unparseable lines, e.g. from an
    /// interrupted write, are skipped.
    pub fn open(path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                if let Ok(entry) = serde_json::from_str::<Entry>(&line?) {
                    entries.insert(entry.key, entry.outcome);
                }
            }
        }
        Ok(Self {
            path: Some(path),
            entries: Mutex::new(entries),
            pending: Mutex::new(Vec::new()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<CachedOutcome> {
        self.entries.lock().unwrap().get(key).cloned()
    }

    pub fn insert(&self, key: String, outcome: CachedOutcome) {
        let mut entries = self.entries.lock().unwrap();
        if entries.insert(key.clone(), outcome).is_none() {
            self.pending.lock().unwrap().push(key);
        }
    }

    /// Appends entries added since the last flush to the backing file.
    pub fn flush(&self) -> std::io::Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let keys: Vec<String> = std::mem::take(&mut *self.pending.lock().unwrap());
        if keys.is_empty() {
            return Ok(());
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let entries = self.entries.lock().unwrap();
        let mut w = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
        for key in keys {
            if let Some(outcome) = entries.get(&key) {
                let entry = Entry {
                    key,
                    outcome: outcome.clone(),
                };
                writeln!(w, "{}", serde_json::to_string(&entry).expect("entry serializes"))?;
            }
        }
        w.flush()
    }
}

/// Cache key for one invocation.
pub fn cache_key(command: &[String], request: &[u8], memory_cap: Option<u64>, output_cap: usize) -> String {
    let mut h = Sha256::new();
    for part in command {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.update((request.len() as u64).to_le_bytes());
    h.update(request);
    h.update(memory_cap.unwrap_or(0).to_le_bytes());
    h.update((output_cap as u64).to_le_bytes());
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_separate_command_boundaries() {
        let a = cache_key(&["ab".into(), "c".into()], b"{}", None, 10);
        let b = cache_key(&["a".into(), "bc".into()], b"{}", None, 10);
        assert_ne!(a, b);
        assert_ne!(a, cache_key(&["ab".into(), "c".into()], b"{}", Some(1), 10));
        assert_eq!(a, cache_key(&["ab".into(), "c".into()], b"{}", None, 10));
    }

    #[test]
    fn flush_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let cache = VerdictCache::open(&path).unwrap();
        let outcome = CachedOutcome {
            verdict: Verdict::Fail,
            detail: "nope".into(),
            wall_time: 0.25,
        };
        cache.insert("k1".into(), outcome.clone());
        cache.insert("k1".into(), outcome.clone());
        cache.flush().unwrap();
        cache.flush().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);

        std::fs::write(&path, format!("{text}{{truncated\n")).unwrap();
        let reopened = VerdictCache::open(&path).unwrap();
        assert_eq!(reopened.get("k1"), Some(outcome));
        assert_eq!(reopened.len(), 1);
    }
}
