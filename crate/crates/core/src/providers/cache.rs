//! Content-addressed response cache.
//!
//! Entries live under `<dir>/<kind>/<first two hex chars>/<sha256>`. Writes
//! go through a temp file and rename, and are serialized per key.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use super::{ChatProvider, ChatRequest, PairScorer, Truncation};
use crate::error::{Error, Result};

#[derive(Debug, Default)]
struct KeyLocks(Mutex<HashMap<String, Arc<Mutex<()>>>>);

impl KeyLocks {
    fn get(&self, key: &str) -> Arc<Mutex<()>> {
        self.0
            .lock()
            .expect("cache lock table poisoned")
            .entry(key.to_string())
            .or_default()
            .clone()
    }
}

fn entry_path(root: &Path, kind: &str, key: &str) -> PathBuf {
    root.join(kind).join(&key[..2]).join(key)
}

fn read_entry(path: &Path) -> Result<Option<Vec<u8>>> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn write_entry(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().expect("entry has parent");
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Caches chat completions keyed by SHA-256 of
/// (template id, prompt, temperature, max output tokens).
pub struct CachedChat<P> {
    inner: P,
    dir: PathBuf,
    locks: KeyLocks,
}

impl<P: ChatProvider> CachedChat<P> {
    pub fn new(inner: P, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
            locks: KeyLocks::default(),
        }
    }

    pub fn key(request: &ChatRequest) -> String {
        let mut h = Sha256::new();
        h.update(request.template_id.as_str().as_bytes());
        h.update([0]);
        h.update(request.filled_prompt.as_bytes());
        h.update([0]);
        h.update(request.temperature.to_bits().to_le_bytes());
        h.update(request.max_output_tokens.to_le_bytes());
        hex::encode(h.finalize())
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: ChatProvider> ChatProvider for CachedChat<P> {
    fn chat(&self, request: &ChatRequest) -> Result<String> {
        let key = Self::key(request);
        let path = entry_path(&self.dir, "chat", &key);
        let lock = self.locks.get(&key);
        let _guard = lock.lock().expect("cache key lock poisoned");
        if let Some(bytes) = read_entry(&path)? {
            return String::from_utf8(bytes)
                .map_err(|_| Error::Data(format!("cache entry {} is not utf-8", path.display())));
        }
        let completion = self.inner.chat(request)?;
        write_entry(&path, completion.as_bytes())?;
        Ok(completion)
    }
}

/// Caches cross-encoder scores per (truncated query, truncated passage).
pub struct CachedScorer<P> {
    inner: P,
    dir: PathBuf,
    locks: KeyLocks,
}

impl<P: PairScorer> CachedScorer<P> {
    pub fn new(inner: P, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
            locks: KeyLocks::default(),
        }
    }

    fn key(query: &str, passage: &str) -> String {
        let mut h = Sha256::new();
        h.update(query.as_bytes());
        h.update([0]);
        h.update(passage.as_bytes());
        hex::encode(h.finalize())
    }
}

impl<P: PairScorer> PairScorer for CachedScorer<P> {
    fn truncation(&self) -> Truncation {
        self.inner.truncation()
    }

    fn score_truncated(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>> {
        let keys: Vec<String> = passages.iter().map(|p| Self::key(query, p)).collect();
        let mut scores = vec![None; passages.len()];
        let mut missing = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            let path = entry_path(&self.dir, "score", key);
            match read_entry(&path)? {
                Some(bytes) => {
                    let s = std::str::from_utf8(&bytes)
                        .ok()
                        .and_then(|s| s.parse::<f64>().ok())
                        .ok_or_else(|| Error::Data(format!("bad score entry {}", path.display())))?;
                    scores[i] = Some(s);
                }
                None => missing.push(i),
            }
        }
        if !missing.is_empty() {
            let batch: Vec<&str> = missing.iter().map(|&i| passages[i]).collect();
            let fresh = self.inner.score_truncated(query, &batch)?;
            if fresh.len() != batch.len() {
                return Err(Error::Contract("scorer returned wrong number of scores".into()));
            }
            for (&i, s) in missing.iter().zip(fresh) {
                let lock = self.locks.get(&keys[i]);
                let _guard = lock.lock().expect("cache key lock poisoned");
                // f64 Display is shortest round-trip
                write_entry(&entry_path(&self.dir, "score", &keys[i]), s.to_string().as_bytes())?;
                scores[i] = Some(s);
            }
        }
        Ok(scores.into_iter().map(|s| s.expect("filled")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{MockChat, MockDense, MockScorer};
    use crate::templates::TemplateId;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting(AtomicUsize);

    impl ChatProvider for Counting {
        fn chat(&self, r: &ChatRequest) -> Result<String> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(format!("reply to {}\n\u{e9}", r.filled_prompt))
        }
    }

    #[test]
    fn second_call_is_a_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cached = CachedChat::new(Counting(AtomicUsize::new(0)), dir.path());
        let r = ChatRequest::new(TemplateId::Reader, "p".into(), 0.0, 8).unwrap();
        let a = cached.chat(&r).unwrap();
        let b = cached.chat(&r).unwrap();
        assert_eq!(a.as_bytes(), b.as_bytes());
        assert_eq!(cached.inner().0.load(Ordering::SeqCst), 1);

        let other = ChatRequest::new(TemplateId::Reader, "p".into(), 0.5, 8).unwrap();
        cached.chat(&other).unwrap();
        assert_eq!(cached.inner().0.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn cache_persists_across_instances() {
        let dir = tempfile::tempdir().unwrap();
        let r = ChatRequest::new(TemplateId::Expand, "q".into(), 0.0, 8).unwrap();
        let first = CachedChat::new(MockChat::new(), dir.path()).chat(&r).unwrap();
        let again = CachedChat::new(Counting(AtomicUsize::new(0)), dir.path());
        assert_eq!(again.chat(&r).unwrap(), first);
        assert_eq!(again.inner().0.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn scores_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let scorer = MockScorer::dense(MockDense::new(32, 3));
        let direct = scorer.score_pairs("q", &["a", "b", "c"]).unwrap();
        let cached = CachedScorer::new(scorer, dir.path());
        let warm = cached.score_pairs("q", &["a", "b"]).unwrap();
        let mixed = cached.score_pairs("q", &["a", "b", "c"]).unwrap();
        assert_eq!(warm, direct[..2]);
        assert_eq!(mixed, direct);
    }
}
