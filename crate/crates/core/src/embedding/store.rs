//! Content-addressed embedding store and its binary file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TEMB" | version: u32 | provider id length: u16 | provider id (UTF-8) | dim: u32
//! repeated: content hash [32] | modality: u8 (0 image, 1 text) | dim × f32
//! SHA-256 of every preceding byte [32]
//! ```
//!
//! Records are written sorted by (hash, modality), so equal stores serialize
//! to equal bytes.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use sha2::{Digest, Sha256};

use super::{ContentHash, Embedding, EmbeddingError, EmbeddingProvider, Modality, EMBED_DIM};

pub const STORE_MAGIC: &[u8; 4] = b"TEMB";
pub const STORE_VERSION: u32 = 1;

const RECORD_LEN: usize = 32 + 1 + 4 * EMBED_DIM;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    provider_id: String,
    entries: BTreeMap<(ContentHash, Modality), Vec<f32>>,
}

fn corrupt(msg: impl Into<String>) -> EmbeddingError {
    EmbeddingError::CorruptStore(msg.into())
}

impl EmbeddingStore {
    pub fn new(provider_id: impl Into<String>) -> Self {
        EmbeddingStore {
            provider_id: provider_id.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, hash: ContentHash, modality: Modality) -> Option<Embedding> {
        self.entries
            .get(&(hash, modality))
            .map(|v| Embedding {
                vector: v.clone(),
                modality,
                source_hash: hash,
            })
    }

    pub fn insert(&mut self, embedding: Embedding) {
        self.entries.insert(
            (embedding.source_hash, embedding.modality),
            embedding.vector,
        );
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let id = self.provider_id.as_bytes();
        let mut out = Vec::with_capacity(14 + id.len() + self.entries.len() * RECORD_LEN + 32);
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&(EMBED_DIM as u32).to_le_bytes());
        for ((hash, modality), vector) in &self.entries {
            out.extend_from_slice(&hash.0);
            out.push(*modality as u8);
            for x in vector {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let checksum = Sha256::digest(&out);
        out.extend_from_slice(&checksum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        if bytes.len() < 4 + 4 + 2 + 4 + 32 {
            return Err(corrupt("file too short"));
        }
        if &bytes[..4] != STORE_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(corrupt("checksum mismatch"));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
        if version != STORE_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let id_len = u16::from_le_bytes(body[8..10].try_into().unwrap()) as usize;
        let mut pos = 10;
        let id = body
            .get(pos..pos + id_len)
            .ok_or_else(|| corrupt("truncated provider id"))?;
        let provider_id = std::str::from_utf8(id)
            .map_err(|_| corrupt("provider id is not UTF-8"))?
            .to_string();
        pos += id_len;
        let dim = body
            .get(pos..pos + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| corrupt("truncated header"))?;
        pos += 4;
        if dim != EMBED_DIM {
            return Err(EmbeddingError::Dimension {
                expected: EMBED_DIM,
                actual: dim,
            });
        }
        let records = &body[pos..];
        if records.len() % RECORD_LEN != 0 {
            return Err(corrupt("record section has a partial record"));
        }
        let mut entries = BTreeMap::new();
        for rec in records.chunks_exact(RECORD_LEN) {
            let hash = ContentHash(rec[..32].try_into().unwrap());
            let modality = match rec[32] {
                0 => Modality::Image,
                1 => Modality::Text,
                m => return Err(corrupt(format!("unknown modality byte {m}"))),
            };
            let vector: Vec<f32> = rec[33..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            if entries.insert((hash, modality), vector).is_some() {
                return Err(corrupt(format!("duplicate entry for {hash}")));
            }
        }
        Ok(EmbeddingStore {
            provider_id,
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let bytes = std::fs::read(path).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        let io = |source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        };
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }
}

type Slot = Arc<OnceLock<Result<Embedding, String>>>;

/// Memoizing front for a provider.
///
/// At most one provider call is made per (content hash, modality); concurrent
/// requests for the same content wait on a single computation.
pub struct EmbeddingCache<P> {
    provider: P,
    store: Mutex<EmbeddingStore>,
    inflight: Mutex<HashMap<(ContentHash, Modality), Slot>>,
    provider_calls: AtomicUsize,
}

impl<P: EmbeddingProvider> EmbeddingCache<P> {
    pub fn new(provider: P) -> Self {
        let store = EmbeddingStore::new(provider.id());
        EmbeddingCache {
            provider,
            store: Mutex::new(store),
            inflight: Mutex::new(HashMap::new()),
            provider_calls: AtomicUsize::new(0),
        }
    }

    /// Starts from an existing store, which must come from the same provider.
    pub fn with_store(provider: P, store: EmbeddingStore) -> Result<Self, EmbeddingError> {
        if store.provider_id() != provider.id() {
            return Err(EmbeddingError::ProviderMismatch {
                expected: provider.id().to_string(),
                found: store.provider_id().to_string(),
            });
        }
        let cache = Self::new(provider);
        *cache.store.lock().unwrap() = store;
        Ok(cache)
    }

    /// Opens `path` if it exists, otherwise starts empty.
    pub fn open(provider: P, path: &Path) -> Result<Self, EmbeddingError> {
        if path.exists() {
            Self::with_store(provider, EmbeddingStore::load(path)?)
        } else {
            Ok(Self::new(provider))
        }
    }

    pub fn provider(&self) -> &P {
        &self.provider
    }

    pub fn provider_calls(&self) -> usize {
        self.provider_calls.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.store.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> EmbeddingStore {
        self.store.lock().unwrap().clone()
    }

    pub fn persist(&self, path: &Path) -> Result<(), EmbeddingError> {
        self.snapshot().save(path)
    }

    /// Returns the stored embedding for `hash`, or runs `compute` once.
    pub fn get_or_compute(
        &self,
        hash: ContentHash,
        modality: Modality,
        compute: impl FnOnce(&P) -> Result<Embedding, EmbeddingError>,
    ) -> Result<Embedding, EmbeddingError> {
        if let Some(e) = self.store.lock().unwrap().get(hash, modality) {
            return Ok(e);
        }
        let slot = self
            .inflight
            .lock()
            .unwrap()
            .entry((hash, modality))
            .or_default()
            .clone();
        let result = slot
            .get_or_init(|| {
                // Another caller may have finished between the store check and
                // taking the slot.
                if let Some(e) = self.store.lock().unwrap().get(hash, modality) {
                    return Ok(e);
                }
                self.provider_calls.fetch_add(1, Ordering::SeqCst);
                let computed = compute(&self.provider).map_err(|e| e.to_string())?;
                if computed.source_hash() != hash || computed.modality() != modality {
                    return Err(format!("provider returned an embedding for different content than {hash}"));
                }
                self.store.lock().unwrap().insert(computed.clone());
                Ok(computed)
            })
            .clone();
        // Failed or finished slots are dropped; later callers hit the store.
        self.inflight.lock().unwrap().remove(&(hash, modality));
        result.map_err(EmbeddingError::ProviderUnavailable)
    }

    pub fn image(&self, bytes: &[u8]) -> Result<Embedding, EmbeddingError> {
        self.get_or_compute(ContentHash::of(bytes), Modality::Image, |p| p.embed_image(bytes))
    }

    pub fn text(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        self.get_or_compute(ContentHash::of(text.as_bytes()), Modality::Text, |p| p.embed_text(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{FixtureProvider, FIXTURE_PROVIDER_ID};

    #[test]
    fn same_hash_calls_provider_once() {
        let cache = EmbeddingCache::new(FixtureProvider);
        let a = cache.text("Task F1QL option too_thick: overly bold strokes").unwrap();
        let b = cache.text("Task F1QL option too_thick: overly bold strokes").unwrap();
        assert_eq!(a, b);
        assert_eq!(cache.provider_calls(), 1);
    }

    #[test]
    fn cold_store_gets_one_entry_per_unique_input() {
        let cache = EmbeddingCache::new(FixtureProvider);
        for i in 0..10 {
            cache.text(&format!("prompt {}", i % 4)).unwrap();
        }
        assert_eq!(cache.len(), 4);
        assert_eq!(cache.provider_calls(), 4);
    }

    #[test]
    fn store_round_trips_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.temb");
        let cache = EmbeddingCache::new(FixtureProvider);
        for i in 0..3 {
            cache.text(&format!("t{i}")).unwrap();
        }
        cache.persist(&path).unwrap();
        let loaded = EmbeddingStore::load(&path).unwrap();
        assert_eq!(loaded, cache.snapshot());
        assert_eq!(loaded.to_bytes(), std::fs::read(&path).unwrap());
        for (key, v) in &loaded.entries {
            let original = cache.snapshot().get(key.0, key.1).unwrap();
            let bits: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
            let orig_bits: Vec<u32> = original.vector().iter().map(|x| x.to_bits()).collect();
            assert_eq!(bits, orig_bits);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let mut store = EmbeddingStore::new(FIXTURE_PROVIDER_ID);
        store.insert(FixtureProvider.embed_text("x").unwrap());
        let bytes = store.to_bytes();
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(EmbeddingStore::from_bytes(&flipped), Err(EmbeddingError::CorruptStore(_))));
        assert!(EmbeddingStore::from_bytes(&bytes[..bytes.len() - 5]).is_err());
        assert!(EmbeddingStore::from_bytes(b"TEMB").is_err());
    }

    #[test]
    fn mixed_provider_store_is_rejected() {
        let store = EmbeddingStore::new("some-other-encoder");
        assert!(matches!(
            EmbeddingCache::with_store(FixtureProvider, store),
            Err(EmbeddingError::ProviderMismatch { .. })
        ));
    }

    #[test]
    fn concurrent_requests_are_single_flight() {
        let cache = Arc::new(EmbeddingCache::new(FixtureProvider));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let cache = Arc::clone(&cache);
                std::thread::spawn(move || cache.text("shared prompt").unwrap())
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(results.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(cache.provider_calls(), 1);
    }
}
