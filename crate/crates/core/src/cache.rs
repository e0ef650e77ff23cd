//! Content-addressed artifact store: one JSON file per stage and digest.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const CACHE_ENV: &str = "RPL_CACHE_DIR";

/// Writes `v` with object keys sorted at every level.
fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String((*k).clone()).to_string());
                out.push(':');
                write_canonical(&map[*k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, x) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(x, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

/// SHA-256 of the canonical form of the stage inputs.
pub fn cache_key(inputs: &Value) -> String {
    hex::encode(Sha256::digest(canonical_json(inputs).as_bytes()))
}

#[derive(Debug)]
pub struct Cache {
    root: PathBuf,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, stage: &str, key: &str) -> PathBuf {
        self.root.join(stage).join(format!("{key}.json"))
    }

    /// A missing or unreadable entry counts as a miss.
    pub fn get<T: DeserializeOwned>(&self, stage: &str, key: &str) -> Option<T> {
        let found = std::fs::read(self.path(stage, key))
            .ok()
            .and_then(|bytes| serde_json::from_slice(&bytes).ok());
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    /// Write-then-rename, so readers never observe a partial entry.
    pub fn put<T: Serialize>(&self, stage: &str, key: &str, value: &T) -> Result<()> {
        let dir = self.root.join(stage);
        std::fs::create_dir_all(&dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
        tmp.write_all(&serde_json::to_vec(value)?)?;
        tmp.flush()?;
        tmp.persist(self.path(stage, key)).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn get_or_compute<T, F>(&self, stage: &str, key: &str, compute: F) -> Result<(T, bool)>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        if let Some(v) = self.get(stage, key) {
            return Ok((v, true));
        }
        let v = compute()?;
        self.put(stage, key, &v)?;
        Ok((v, false))
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    /// Removes every entry; returns the number of files deleted.
    pub fn clear(&self) -> Result<usize> {
        let mut removed = 0;
        if !self.root.exists() {
            return Ok(0);
        }
        for stage in std::fs::read_dir(&self.root)? {
            let stage = stage?.path();
            if !stage.is_dir() {
                continue;
            }
            for entry in std::fs::read_dir(&stage)? {
                let p = entry?.path();
                if p.extension().is_some_and(|e| e == "json") {
                    std::fs::remove_file(&p)?;
                    removed += 1;
                }
            }
            let _ = std::fs::remove_dir(&stage);
        }
        Ok(removed)
    }
}
