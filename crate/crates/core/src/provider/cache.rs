use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use parking_lot::{ArcMutexGuard, RawMutex};

use sha2::{Digest, Sha256};

use super::{CompletionRequest, ProviderSpec};

/// Hex SHA-256 over provider id, model name, prompt, temperature and token
/// budget.
pub fn cache_key(spec: &ProviderSpec, req: &CompletionRequest) -> String {
    let material = serde_json::json!([
        req.provider_id,
        spec.model_name,
        req.prompt,
        req.temperature,
        req.max_tokens
    ]);
    hex::encode(Sha256::digest(material.to_string().as_bytes()))
}

/// Directory of `<hex digest>` files holding raw response text.
///
/// Writes go through a temp file and a rename, so concurrent writers of the
/// same key leave one complete entry. Within a process, concurrent lookups of
/// one key are serialized so a key is fetched at most once.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    in_flight: Mutex<HashMap<String, Arc<parking_lot::Mutex<()>>>>,
}

pub(crate) type KeyGuard = ArcMutexGuard<RawMutex, ()>;

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, in_flight: Mutex::new(HashMap::new()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(key)
    }

    pub(crate) fn lock_key(&self, key: &str) -> KeyGuard {
        let lock = self
            .in_flight
            .lock()
            .unwrap()
            .entry(key.to_string())
            .or_insert_with(|| Arc::new(parking_lot::Mutex::new(())))
            .clone();
        lock.lock_arc()
    }

    /// Stored text for `key`. Unreadable or non-UTF-8 entries count as a miss.
    pub fn get(&self, key: &str) -> Option<String> {
        let path = self.path_for(key);
        match std::fs::read(&path) {
            Ok(bytes) => match String::from_utf8(bytes) {
                Ok(text) => Some(text),
                Err(_) => {
                    tracing::warn!(path = %path.display(), "corrupt cache entry, treating as miss");
                    None
                }
            },
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => {
                tracing::warn!(path = %path.display(), error = %e, "unreadable cache entry, treating as miss");
                None
            }
        }
    }

    pub fn put(&self, key: &str, text: &str) {
        let result = tempfile::NamedTempFile::new_in(&self.dir).and_then(|mut tmp| {
            tmp.write_all(text.as_bytes())?;
            tmp.persist(self.path_for(key)).map_err(|e| e.error)?;
            Ok(())
        });
        if let Err(e) = result {
            tracing::warn!(key, error = %e, "failed to store cache entry");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Backend, ChatModel, Provider, ProviderError};
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting(Arc<AtomicUsize>);

    impl Backend for Counting {
        fn call(&self, _: &ProviderSpec, req: &CompletionRequest) -> Result<String, ProviderError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(2));
            Ok(format!("answer to {}", req.prompt))
        }
    }

    fn provider(calls: &Arc<AtomicUsize>) -> Provider {
        Provider::with_backend(ProviderSpec::mock("m"), Box::new(Counting(calls.clone())))
    }

    #[test]
    fn second_request_is_a_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let p = provider(&calls);
        let req = p.request("<person,hug,table>");
        let a = p.cached_complete(&req, &cache).unwrap();
        let b = p.cached_complete(&req, &cache).unwrap();
        assert!(!a.cached);
        assert!(b.cached);
        assert_eq!(a.text, b.text);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(p.stats().cache_hits, 1);
    }

    #[test]
    fn key_is_sensitive_to_prompt_and_parameters() {
        let spec = ProviderSpec::mock("m");
        let base = CompletionRequest::new("m", "<person,hug,table>");
        let k = cache_key(&spec, &base);
        assert_eq!(k.len(), 64);
        let mut one_char = base.clone();
        one_char.prompt.push('x');
        assert_ne!(k, cache_key(&spec, &one_char));
        let mut warm = base.clone();
        warm.temperature = 0.7;
        assert_ne!(k, cache_key(&spec, &warm));
        let mut tokens = base.clone();
        tokens.max_tokens = 512;
        assert_ne!(k, cache_key(&spec, &tokens));
        let mut other_model = spec.clone();
        other_model.model_name = "other".into();
        assert_ne!(k, cache_key(&other_model, &base));
    }

    #[test]
    fn entries_are_named_by_digest_and_hold_raw_text() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let p = provider(&calls);
        let req = p.request("q");
        p.cached_complete(&req, &cache).unwrap();
        let key = cache_key(p.spec(), &req);
        assert_eq!(std::fs::read_to_string(dir.path().join(&key)).unwrap(), "answer to q");
    }

    #[test]
    fn corrupt_entry_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let p = provider(&calls);
        let req = p.request("q");
        std::fs::write(dir.path().join(cache_key(p.spec(), &req)), [0xff, 0xfe, 0x00]).unwrap();
        let r = p.cached_complete(&req, &cache).unwrap();
        assert!(!r.cached);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(cache.get(&cache_key(p.spec(), &req)).unwrap(), "answer to q");
    }

    #[test]
    fn remote_calls_equal_distinct_keys_under_concurrency() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(ResponseCache::open(dir.path()).unwrap());
        let calls = Arc::new(AtomicUsize::new(0));
        let p = provider(&calls).with_cache(cache);
        let prompts: Vec<String> = (0..60).map(|i| format!("prompt {}", i % 7)).collect();
        std::thread::scope(|s| {
            for prompt in &prompts {
                let p = &p;
                s.spawn(move || p.ask(prompt).unwrap());
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 7);
        assert_eq!(p.stats().remote_calls, 7);
        assert_eq!(p.stats().cache_hits, 53);
    }
}
