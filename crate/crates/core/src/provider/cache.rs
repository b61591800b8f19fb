use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ProviderError;

const CACHE_FILE: &str = "responses.jsonl";

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    value: String,
}

/// Content-addressed response store. On disk it is one JSON object per line,
/// `{"key": ..., "value": ...}`, appended as responses arrive.
pub struct ResponseCache {
    entries: Mutex<HashMap<String, String>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self { entries: Mutex::new(HashMap::new()), file: None, path: None }
    }

    /// Opens (or creates) `dir/responses.jsonl`. Torn trailing lines are ignored.
    pub fn open(dir: &Path) -> Result<Self, ProviderError> {
        let err = |e: std::io::Error| ProviderError::Cache(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(err)?;
        let path = dir.join(CACHE_FILE);
        let mut entries = HashMap::new();
        let mut torn_tail = false;
        if path.exists() {
            let mut reader = BufReader::new(File::open(&path).map_err(err)?);
            let mut line = String::new();
            while reader.read_line(&mut line).map_err(err)? > 0 {
                torn_tail = !line.ends_with('\n');
                if let Ok(entry) = serde_json::from_str::<Entry>(line.trim_end()) {
                    entries.insert(entry.key, entry.value);
                }
                line.clear();
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(err)?;
        if torn_tail {
            // keep the next append on its own line
            file.write_all(b"\n").map_err(err)?;
        }
        Ok(Self { entries: Mutex::new(entries), file: Some(Mutex::new(file)), path: Some(path) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).get(key).cloned()
    }

    pub fn put(&self, key: &str, value: &str) -> Result<(), ProviderError> {
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        if entries.get(key).map(String::as_str) == Some(value) {
            return Ok(());
        }
        entries.insert(key.to_string(), value.to_string());
        if let Some(file) = &self.file {
            let mut line = serde_json::to_string(&Entry { key: key.into(), value: value.into() })
                .map_err(|e| ProviderError::Cache(e.to_string()))?;
            line.push('\n');
            let mut f = file.lock().unwrap_or_else(|e| e.into_inner());
            f.write_all(line.as_bytes()).map_err(|e| ProviderError::Cache(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let cache = ResponseCache::open(dir.path()).unwrap();
            cache.put("k1", "v1").unwrap();
            cache.put("k2", "line\nbreak").unwrap();
        }
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(cache.get("k1").as_deref(), Some("v1"));
        assert_eq!(cache.get("k2").as_deref(), Some("line\nbreak"));
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn torn_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(CACHE_FILE), "{\"key\":\"a\",\"value\":\"b\"}\n{\"key\":\"c\",").unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(cache.get("a").as_deref(), Some("b"));
        assert_eq!(cache.get("c"), None);
    }
}
