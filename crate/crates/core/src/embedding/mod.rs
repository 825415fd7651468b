//! Embedding contract and probe feature assembly.
//!
//! Every embedding is a unit vector of [`EMBED_DIM`] components. A probe
//! input is the concatenation
//! `[natural ∥ tactile ∥ natural − tactile ∥ option text]` of length
//! [`FEATURE_DIM`]. The difference block is taken after normalization and is
//! not normalized again, so its norm carries the size of the cross-modal gap.

mod features;
mod provider;
mod store;

pub use features::{FeatureMap, FeatureSource, PairFeatureSource};
pub use provider::{EmbeddingProvider, FixtureProvider, StoreProvider, FIXTURE_PROVIDER_ID};
pub use store::{EmbeddingCache, EmbeddingStore, STORE_MAGIC, STORE_VERSION};

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{OptionDef, TaskCode};

/// Dimension of one image or text embedding.
pub const EMBED_DIM: usize = 768;
/// Dimension of the probe input.
pub const FEATURE_DIM: usize = 4 * EMBED_DIM;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot normalize a zero or non-finite vector")]
    ZeroVector,
    #[error("expected dimension {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("expected a {expected} embedding, got {actual}")]
    Modality { expected: Modality, actual: Modality },
    #[error("embedding is not unit norm (norm {0})")]
    NotUnit(f64),
    #[error("undecodable image: {0}")]
    UndecodableImage(String),
    #[error("empty text input")]
    EmptyText,
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("store provider id {found:?} does not match {expected:?}")]
    ProviderMismatch { expected: String, found: String },
    #[error("corrupt embedding store: {0}")]
    CorruptStore(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image = 0,
    Text = 1,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Image => "image",
            Modality::Text => "text",
        })
    }
}

/// SHA-256 of the raw input (image file bytes or UTF-8 text).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        ContentHash(Sha256::digest(bytes).into())
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({self})")
    }
}

/// Scales `v` to unit Euclidean norm.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>, EmbeddingError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    vector: Vec<f32>,
    modality: Modality,
    source_hash: ContentHash,
}

impl Embedding {
    /// Normalizes a raw encoder output.
    pub fn from_raw(raw: &[f64], modality: Modality, source_hash: ContentHash) -> Result<Self, EmbeddingError> {
        if raw.len() != EMBED_DIM {
            return Err(EmbeddingError::Dimension {
                expected: EMBED_DIM,
                actual: raw.len(),
            });
        }
        let unit = normalize(raw)?;
        Ok(Embedding {
            vector: unit.into_iter().map(|x| x as f32).collect(),
            modality,
            source_hash,
        })
    }

    /// Wraps an already-normalized vector, checking dimension and norm.
    pub fn from_unit(vector: Vec<f32>, modality: Modality, source_hash: ContentHash) -> Result<Self, EmbeddingError> {
        if vector.len() != EMBED_DIM {
            return Err(EmbeddingError::Dimension {
                expected: EMBED_DIM,
                actual: vector.len(),
            });
        }
        let norm = vector.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-5 {
            return Err(EmbeddingError::NotUnit(norm));
        }
        Ok(Embedding {
            vector,
            modality,
            source_hash,
        })
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn source_hash(&self) -> ContentHash {
        self.source_hash
    }

    pub fn norm(&self) -> f64 {
        self.vector
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt()
    }
}

/// Text prompt embedded for an option: `Task {task} option {id}: {description}`.
pub fn option_prompt(task: TaskCode, option: &OptionDef) -> String {
    format!(
        "Task {task} option {}: {}",
        option.option_id, option.description
    )
    .trim_end()
    .to_string()
}

/// Probe input vector of length [`FEATURE_DIM`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn from_vec(components: Vec<f64>) -> Result<Self, EmbeddingError> {
        if components.len() != FEATURE_DIM {
            return Err(EmbeddingError::Dimension {
                expected: FEATURE_DIM,
                actual: components.len(),
            });
        }
        Ok(FeatureVector(components))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    fn block(&self, i: usize) -> &[f64] {
        &self.0[i * EMBED_DIM..(i + 1) * EMBED_DIM]
    }

    pub fn natural(&self) -> &[f64] {
        self.block(0)
    }

    pub fn tactile(&self) -> &[f64] {
        self.block(1)
    }

    pub fn difference(&self) -> &[f64] {
        self.block(2)
    }

    pub fn text(&self) -> &[f64] {
        self.block(3)
    }
}

/// Builds `[natural ∥ tactile ∥ natural − tactile ∥ text]`.
pub fn assemble_features(
    natural: &Embedding,
    tactile: &Embedding,
    text: &Embedding,
) -> Result<FeatureVector, EmbeddingError> {
    for (emb, expected) in [
        (natural, Modality::Image),
        (tactile, Modality::Image),
        (text, Modality::Text),
    ] {
        if emb.modality != expected {
            return Err(EmbeddingError::Modality {
                expected,
                actual: emb.modality,
            });
        }
        if emb.vector.len() != EMBED_DIM {
            return Err(EmbeddingError::Dimension {
                expected: EMBED_DIM,
                actual: emb.vector.len(),
            });
        }
    }
    let mut out = Vec::with_capacity(FEATURE_DIM);
    out.extend(natural.vector.iter().map(|&x| f64::from(x)));
    out.extend(tactile.vector.iter().map(|&x| f64::from(x)));
    out.extend(
        natural
            .vector
            .iter()
            .zip(&tactile.vector)
            .map(|(&n, &t)| f64::from(n) - f64::from(t)),
    );
    out.extend(text.vector.iter().map(|&x| f64::from(x)));
    Ok(FeatureVector(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Polarity;

    fn unit_axis(i: usize, modality: Modality) -> Embedding {
        let mut v = vec![0.0; EMBED_DIM];
        v[i] = 1.0;
        Embedding::from_raw(&v, modality, ContentHash::of(&[i as u8])).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let mut v = vec![0.0; EMBED_DIM];
        v[0] = 3.0;
        v[1] = 4.0;
        let u = normalize(&v).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-15);
        assert!((u[1] - 0.8).abs() < 1e-15);
        assert!(u[2..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalize_is_idempotent_on_unit_vectors() {
        let u = normalize(&[0.6, 0.8, 0.0]).unwrap();
        let again = normalize(&u).unwrap();
        for (a, b) in u.iter().zip(&again) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_vector_cannot_be_normalized() {
        assert!(matches!(normalize(&vec![0.0; EMBED_DIM]), Err(EmbeddingError::ZeroVector)));
    }

    #[test]
    fn option_prompt_template() {
        let opt = OptionDef {
            option_id: "too_thick".into(),
            task: "F1QL".parse().unwrap(),
            description: "overly bold strokes".into(),
            polarity: Polarity::Defect,
            actionable: true,
            template_key: Some("too_thick".into()),
        };
        let task = opt.task;
        assert_eq!(option_prompt(task, &opt), "Task F1QL option too_thick: overly bold strokes");
        assert_eq!(option_prompt(task, &opt), option_prompt(task, &opt));
        let empty = OptionDef {
            option_id: "x".into(),
            description: String::new(),
            ..opt
        };
        // The template's own separator is kept; trailing whitespace is not.
        assert_eq!(option_prompt(task, &empty), "Task F1QL option x:");
    }

    #[test]
    fn identical_images_give_zero_difference() {
        let n = unit_axis(3, Modality::Image);
        let text = unit_axis(5, Modality::Text);
        let f = assemble_features(&n, &n, &text).unwrap();
        assert!(f.difference().iter().all(|&x| x == 0.0));
        assert_eq!(f.as_slice().len(), FEATURE_DIM);
    }

    #[test]
    fn orthogonal_images_give_root_two_difference() {
        let n = unit_axis(0, Modality::Image);
        let t = unit_axis(1, Modality::Image);
        let text = unit_axis(2, Modality::Text);
        let f = assemble_features(&n, &t, &text).unwrap();
        let norm = f.difference().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn wrong_modality_is_rejected() {
        let n = unit_axis(0, Modality::Image);
        let text = unit_axis(2, Modality::Text);
        assert!(matches!(
            assemble_features(&n, &text, &text),
            Err(EmbeddingError::Modality { .. })
        ));
        assert!(matches!(
            assemble_features(&n, &n, &n),
            Err(EmbeddingError::Modality { .. })
        ));
    }
}
