use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Mutex;

use super::{assemble_features, option_prompt, Embedding, EmbeddingCache, EmbeddingError, EmbeddingProvider, FeatureVector};
use crate::corpus::{BinaryRecord, ImagePair, OptionDef, RecordKey, Registry, TaskCode};

/// Anything that can produce the probe input for a record.
pub trait FeatureSource: Sync {
    fn features(&self, record: &BinaryRecord) -> Result<FeatureVector, EmbeddingError>;
}

/// Precomputed features keyed by record identity.
#[derive(Debug, Clone, Default)]
pub struct FeatureMap {
    map: HashMap<RecordKey, FeatureVector>,
}

impl FeatureMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: RecordKey, features: FeatureVector) {
        self.map.insert(key, features);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl FeatureSource for FeatureMap {
    fn features(&self, record: &BinaryRecord) -> Result<FeatureVector, EmbeddingError> {
        self.map
            .get(&record.key())
            .cloned()
            .ok_or_else(|| EmbeddingError::Missing(format!("no features for {}/{}/{}", record.pair_id, record.task, record.option_id)))
    }
}

/// Builds features from image files on disk through an embedding cache.
pub struct PairFeatureSource<'a, P> {
    registry: &'a Registry,
    pairs: &'a BTreeMap<String, ImagePair>,
    image_root: PathBuf,
    cache: &'a EmbeddingCache<P>,
    images: Mutex<HashMap<String, (Embedding, Embedding)>>,
}

impl<'a, P: EmbeddingProvider> PairFeatureSource<'a, P> {
    pub fn new(
        registry: &'a Registry,
        pairs: &'a BTreeMap<String, ImagePair>,
        image_root: impl Into<PathBuf>,
        cache: &'a EmbeddingCache<P>,
    ) -> Self {
        PairFeatureSource {
            registry,
            pairs,
            image_root: image_root.into(),
            cache,
            images: Mutex::new(HashMap::new()),
        }
    }

    pub fn pair(&self, pair_id: &str) -> Result<&'a ImagePair, EmbeddingError> {
        self.pairs
            .get(pair_id)
            .ok_or_else(|| EmbeddingError::Missing(format!("unknown pair {pair_id:?}")))
    }

    pub fn option(&self, task: TaskCode, option_id: &str) -> Result<&'a OptionDef, EmbeddingError> {
        self.registry
            .option(task, option_id)
            .ok_or_else(|| EmbeddingError::Missing(format!("unknown option {task}/{option_id}")))
    }

    pub fn read_image(&self, path: &std::path::Path) -> Result<Vec<u8>, EmbeddingError> {
        std::fs::read(path).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Natural and tactile embeddings for a pair, memoized per pair id.
    pub fn pair_embeddings(&self, pair_id: &str) -> Result<(Embedding, Embedding), EmbeddingError> {
        if let Some(hit) = self.images.lock().unwrap().get(pair_id) {
            return Ok(hit.clone());
        }
        let pair = self.pair(pair_id)?;
        let natural = self.cache.image(&self.read_image(&pair.natural_path(&self.image_root))?)?;
        let tactile = self.cache.image(&self.read_image(&pair.tactile_path(&self.image_root))?)?;
        let both = (natural, tactile);
        self.images.lock().unwrap().insert(pair_id.to_string(), both.clone());
        Ok(both)
    }

    /// Features for an option on explicit image bytes, e.g. an edited tactile.
    pub fn features_for_images(
        &self,
        natural: &[u8],
        tactile: &[u8],
        task: TaskCode,
        option_id: &str,
    ) -> Result<FeatureVector, EmbeddingError> {
        let option = self.option(task, option_id)?;
        let n = self.cache.image(natural)?;
        let t = self.cache.image(tactile)?;
        let text = self.cache.text(&option_prompt(task, option))?;
        assemble_features(&n, &t, &text)
    }
}

impl<P: EmbeddingProvider> FeatureSource for PairFeatureSource<'_, P> {
    fn features(&self, record: &BinaryRecord) -> Result<FeatureVector, EmbeddingError> {
        let option = self.option(record.task, &record.option_id)?;
        let (natural, tactile) = self.pair_embeddings(&record.pair_id)?;
        let text = self.cache.text(&option_prompt(record.task, option))?;
        assemble_features(&natural, &tactile, &text)
    }
}
