//! Probe checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "TPRB" | version: u32
//! task, option id, provider id: each u16 length + UTF-8
//! input, hidden, output dims: u32 × 3 (output is always 1)
//! best epoch: u32 | val accuracy at best: f64
//! config: learning rate f64, batch size u32, epochs u32, seed u64,
//!         weight decay f64, beta1 f64, beta2 f64, epsilon f64, min records u32
//! parameters as f32: W1 (hidden × input, row-major), b1, W2, b2
//! epochs: u32 count, then per epoch train loss, val loss, val accuracy as f64
//! SHA-256 of every preceding byte [32]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::mlp::MlpParams;
use super::train::TrainConfig;
use super::ProbeError;
use crate::corpus::TaskCode;
use crate::embedding::{FeatureVector, FEATURE_DIM};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TPRB";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_EXTENSION: &str = "tprb";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeCheckpoint {
    pub task: TaskCode,
    pub option_id: String,
    pub provider_id: String,
    pub params: MlpParams,
    pub best_epoch: usize,
    pub val_accuracy_at_best: f64,
    pub history: Vec<EpochStats>,
    pub config: TrainConfig,
}

impl ProbeCheckpoint {
    /// Raw sigmoid output for one feature vector.
    pub fn probability(&self, features: &FeatureVector) -> Result<f64, ProbeError> {
        Ok(super::sigmoid(self.params.forward(features.as_slice())?))
    }

    pub fn logit(&self, features: &FeatureVector) -> Result<f64, ProbeError> {
        self.params.forward(features.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.str(&self.task.to_string());
        w.str(&self.option_id);
        w.str(&self.provider_id);
        w.u32(self.params.input_dim() as u32);
        w.u32(self.params.hidden_dim() as u32);
        w.u32(1);
        w.u32(self.best_epoch as u32);
        w.f64(self.val_accuracy_at_best);
        let c = &self.config;
        w.f64(c.learning_rate);
        w.u32(c.batch_size as u32);
        w.u32(c.epochs as u32);
        w.0.extend_from_slice(&c.seed.to_le_bytes());
        w.f64(c.weight_decay);
        w.f64(c.beta1);
        w.f64(c.beta2);
        w.f64(c.epsilon);
        w.u32(c.min_records as u32);
        for t in self.params.tensors() {
            for &x in t {
                w.0.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        w.u32(self.history.len() as u32);
        for e in &self.history {
            w.f64(e.train_loss);
            w.f64(e.val_loss);
            w.f64(e.val_accuracy);
        }
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        w.0
    }

    /// Parses a checkpoint of any input width. Use [`ProbeCheckpoint::load`]
    /// for probe files, which also checks the feature dimension.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProbeError> {
        if bytes.len() < 4 + 32 {
            return Err(corrupt("file too short"));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ProbeError::CheckpointVersion(version));
        }
        let task: TaskCode = r.str()?.parse().map_err(|e: String| corrupt(e))?;
        let option_id = r.str()?;
        let provider_id = r.str()?;
        let input = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        if r.u32()? != 1 {
            return Err(corrupt("output dimension must be 1"));
        }
        let best_epoch = r.u32()? as usize;
        let val_accuracy_at_best = r.f64()?;
        let config = TrainConfig {
            learning_rate: r.f64()?,
            batch_size: r.u32()? as usize,
            epochs: r.u32()? as usize,
            seed: u64::from_le_bytes(r.take(8)?.try_into().unwrap()),
            weight_decay: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            epsilon: r.f64()?,
            min_records: r.u32()? as usize,
            hidden,
        };
        let mut params = MlpParams::zeros(input, hidden);
        for t in params.tensors_mut() {
            let raw = r.take(t.len() * 4)?;
            for (x, b) in t.iter_mut().zip(raw.chunks_exact(4)) {
                *x = f64::from(f32::from_le_bytes(b.try_into().unwrap()));
            }
        }
        let n = r.u32()? as usize;
        let mut history = Vec::with_capacity(n.min(1 << 16));
        for epoch in 1..=n {
            history.push(EpochStats {
                epoch,
                train_loss: r.f64()?,
                val_loss: r.f64()?,
                val_accuracy: r.f64()?,
            });
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after epoch series"));
        }
        Ok(ProbeCheckpoint {
            task,
            option_id,
            provider_id,
            params,
            best_epoch,
            val_accuracy_at_best,
            history,
            config,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ProbeError> {
        let bytes = std::fs::read(path).map_err(|source| ProbeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ckpt = Self::from_bytes(&bytes)?;
        if ckpt.params.input_dim() != FEATURE_DIM {
            return Err(ProbeError::Dimension {
                expected: FEATURE_DIM,
                actual: ckpt.params.input_dim(),
            });
        }
        Ok(ckpt)
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), ProbeError> {
        let io = |source| ProbeError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }
}

fn corrupt(msg: impl Into<String>) -> ProbeError {
    ProbeError::CorruptCheckpoint(msg.into())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.0.extend_from_slice(&(s.len() as u16).to_le_bytes());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProbeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("truncated"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ProbeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ProbeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, ProbeError> {
        let n = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("string is not UTF-8"))
    }
}

/// `<dir>/<task>/<option>.tprb`
pub fn checkpoint_path(dir: &Path, task: TaskCode, option_id: &str) -> PathBuf {
    dir.join(task.to_string()).join(format!("{option_id}.{CHECKPOINT_EXTENSION}"))
}

/// All probes in a checkpoint directory, keyed by (task, option).
#[derive(Debug, Clone, Default)]
pub struct CheckpointSet {
    probes: BTreeMap<(TaskCode, String), ProbeCheckpoint>,
}

impl CheckpointSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ckpt: ProbeCheckpoint) {
        self.probes.insert((ckpt.task, ckpt.option_id.clone()), ckpt);
    }

    pub fn get(&self, task: TaskCode, option_id: &str) -> Option<&ProbeCheckpoint> {
        self.probes.get(&(task, option_id.to_string()))
    }

    pub fn require(&self, task: TaskCode, option_id: &str) -> Result<&ProbeCheckpoint, ProbeError> {
        self.get(task, option_id).ok_or_else(|| ProbeError::MissingCheckpoint {
            task,
            option_id: option_id.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ProbeCheckpoint> + '_ {
        self.probes.values()
    }

    /// Loads every `*.tprb` under `<dir>/<task>/`. Directories that are not
    /// task codes are ignored.
    pub fn load_dir(dir: &Path) -> Result<Self, ProbeError> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| ProbeError::Io { path, source }
        };
        let mut set = CheckpointSet::new();
        let mut task_dirs: Vec<_> = std::fs::read_dir(dir)
            .map_err(io(dir))?
            .collect::<Result<Vec<_>, _>>()
            .map_err(io(dir))?;
        task_dirs.sort_by_key(|e| e.file_name());
        for entry in task_dirs {
            let Some(task) = entry.file_name().to_str().and_then(|s| s.parse::<TaskCode>().ok()) else {
                continue;
            };
            let path = entry.path();
            if !path.is_dir() {
                continue;
            }
            let mut files: Vec<PathBuf> = std::fs::read_dir(&path)
                .map_err(io(&path))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == CHECKPOINT_EXTENSION))
                .collect();
            files.sort();
            for file in files {
                let ckpt = ProbeCheckpoint::load(&file)?;
                let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                if ckpt.task != task || ckpt.option_id != stem {
                    return Err(corrupt(format!(
                        "{} holds the probe for {}/{}",
                        file.display(),
                        ckpt.task,
                        ckpt.option_id
                    )));
                }
                set.insert(ckpt);
            }
        }
        Ok(set)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), ProbeError> {
        for c in self.iter() {
            c.save(&checkpoint_path(dir, c.task, &c.option_id))?;
        }
        Ok(())
    }
}
