use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ContentHash, Embedding, EmbeddingError, EmbeddingStore, Modality, EMBED_DIM};

/// Source of image and text embeddings. Implementations must be
/// deterministic per input content and return unit vectors.
pub trait EmbeddingProvider: Send + Sync {
    /// Identifier recorded in embedding stores and checkpoints.
    fn id(&self) -> &str;

    fn embed_image(&self, bytes: &[u8]) -> Result<Embedding, EmbeddingError>;

    fn embed_text(&self, text: &str) -> Result<Embedding, EmbeddingError>;
}

pub const FIXTURE_PROVIDER_ID: &str = "fixture/sha256-chacha8-normal/v1";

/// Hash-seeded pseudo-random unit vectors.
///
/// The content hash seeds a ChaCha8 stream; 768 standard normal draws are
/// normalized. Results are identical across machines.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixtureProvider;

impl FixtureProvider {
    pub fn embedding_for(&self, hash: ContentHash, modality: Modality) -> Embedding {
        let mut rng = ChaCha8Rng::from_seed(hash.0);
        let raw: Vec<f64> = (0..EMBED_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
        Embedding::from_raw(&raw, modality, hash).expect("gaussian draw is non-zero")
    }

    /// Embeds arbitrary content without validating it as an image.
    pub fn embed_content(&self, bytes: &[u8], modality: Modality) -> Embedding {
        self.embedding_for(ContentHash::of(bytes), modality)
    }
}

impl EmbeddingProvider for FixtureProvider {
    fn id(&self) -> &str {
        FIXTURE_PROVIDER_ID
    }

    fn embed_image(&self, bytes: &[u8]) -> Result<Embedding, EmbeddingError> {
        image::load_from_memory(bytes).map_err(|e| EmbeddingError::UndecodableImage(e.to_string()))?;
        Ok(self.embed_content(bytes, Modality::Image))
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        if text.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        Ok(self.embed_content(text.as_bytes(), Modality::Text))
    }
}

/// Serves embeddings from a precomputed store, such as one written by the
/// encoder export tool. Unknown content is reported as unavailable.
#[derive(Debug, Clone)]
pub struct StoreProvider {
    store: EmbeddingStore,
}

impl StoreProvider {
    pub fn new(store: EmbeddingStore) -> Self {
        StoreProvider { store }
    }

    fn lookup(&self, hash: ContentHash, modality: Modality) -> Result<Embedding, EmbeddingError> {
        self.store.get(hash, modality).ok_or_else(|| {
            EmbeddingError::ProviderUnavailable(format!(
                "store {:?} has no {modality} embedding for {hash}",
                self.store.provider_id()
            ))
        })
    }
}

impl EmbeddingProvider for StoreProvider {
    fn id(&self) -> &str {
        self.store.provider_id()
    }

    fn embed_image(&self, bytes: &[u8]) -> Result<Embedding, EmbeddingError> {
        self.lookup(ContentHash::of(bytes), Modality::Image)
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        if text.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        self.lookup(ContentHash::of(text.as_bytes()), Modality::Text)
    }
}
