//! Per-option binary probes: a two-layer MLP trained with BCE and AdamW.

mod adamw;
mod checkpoint;
mod loss;
mod mlp;
mod train;

pub use adamw::{adamw_update, AdamWConfig, AdamWState};
pub use checkpoint::{
    checkpoint_path, CheckpointSet, EpochStats, ProbeCheckpoint, CHECKPOINT_EXTENSION, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use loss::{bce_loss, predict, sigmoid};
pub use mlp::MlpParams;
pub use train::{fit, option_seed, train_option, Dataset, FitOutcome, TrainConfig};

use thiserror::Error;

use crate::corpus::TaskCode;
use crate::embedding::EmbeddingError;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("expected input dimension {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("non-finite value in probe input or parameters")]
    NonFinite,
    #[error("empty batch or label count mismatch")]
    EmptyBatch,
    #[error("only {have} training records, need {need}")]
    TooFewRecords { have: usize, need: usize },
    #[error("training labels are all one class")]
    DegenerateData,
    #[error("no validation records to select a checkpoint")]
    NoValidationRecords,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    ForeignRecord(String),
    #[error("no checkpoint for {task}/{option_id}")]
    MissingCheckpoint { task: TaskCode, option_id: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),
    #[error(transparent)]
    Features(#[from] EmbeddingError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ProbeError {
    /// Errors that skip one option rather than abort a batch run.
    pub fn is_skippable(&self) -> bool {
        matches!(
            self,
            ProbeError::TooFewRecords { .. } | ProbeError::DegenerateData | ProbeError::NoValidationRecords
        )
    }
}
