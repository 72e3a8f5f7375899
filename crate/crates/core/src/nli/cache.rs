//! Persistent pairwise NLI cache.
//!
//! Keyed by `(model, premise, hypothesis)`. The on-disk form is JSON lines
//! `{"model", "premise", "hypothesis", "probs": {...}}`, appended as new
//! pairs are classified; on load the last line for a key wins.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{NliBackend, NliResult, Probs};

type Key = (String, String, String);

#[derive(Serialize, Deserialize)]
struct CacheLine {
    model: String,
    premise: String,
    hypothesis: String,
    probs: Probs,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
    pub entries: usize,
}

#[derive(Debug, Default)]
pub struct NliCache {
    map: RwLock<HashMap<Key, NliResult>>,
    sink: Option<(PathBuf, Mutex<BufWriter<File>>)>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl NliCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists and appends new entries to it.
    pub fn open(path: &Path) -> Result<Self> {
        let mut map = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (no, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let l: CacheLine = serde_json::from_str(&line)
                    .map_err(|e| Error::json(format!("{}:{}", path.display(), no + 1), e))?;
                map.insert((l.model, l.premise, l.hypothesis), NliResult::try_from(l.probs)?);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(NliCache {
            map: RwLock::new(map),
            sink: Some((path.to_path_buf(), Mutex::new(BufWriter::new(file)))),
            ..Default::default()
        })
    }

    pub fn get(&self, model: &str, premise: &str, hypothesis: &str) -> Option<NliResult> {
        let key = (model.to_string(), premise.to_string(), hypothesis.to_string());
        let found = self.map.read().get(&key).copied();
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    pub fn insert(&self, model: &str, premise: &str, hypothesis: &str, result: NliResult) -> Result<()> {
        let key = (model.to_string(), premise.to_string(), hypothesis.to_string());
        self.map.write().insert(key, result);
        if let Some((path, sink)) = &self.sink {
            let line = serde_json::to_string(&CacheLine {
                model: model.to_string(),
                premise: premise.to_string(),
                hypothesis: hypothesis.to_string(),
                probs: result.into(),
            })
            .map_err(|e| Error::json("cache line", e))?;
            // one complete line per lock hold
            let mut w = sink.lock();
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            entries: self.map.read().len(),
        }
    }
}

/// Backend wrapper that consults the cache before the inner backend.
#[derive(Debug, Clone)]
pub struct CachedNli<B> {
    inner: B,
    cache: Arc<NliCache>,
}

impl<B: NliBackend> CachedNli<B> {
    pub fn new(inner: B, cache: Arc<NliCache>) -> Self {
        CachedNli { inner, cache }
    }

    pub fn cache(&self) -> &Arc<NliCache> {
        &self.cache
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: NliBackend> NliBackend for CachedNli<B> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliResult> {
        let model = self.inner.model_id();
        if let Some(r) = self.cache.get(model, premise, hypothesis) {
            return Ok(r);
        }
        let r = self.inner.classify(premise, hypothesis)?;
        self.cache.insert(model, premise, hypothesis, r)?;
        Ok(r)
    }
}
