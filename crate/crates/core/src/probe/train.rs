use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adamw::{AdamWConfig, AdamWState};
use super::checkpoint::{EpochStats, ProbeCheckpoint};
use super::mlp::MlpParams;
use super::ProbeError;
use crate::corpus::{BinaryRecord, Split, TaskCode};
use crate::embedding::{FeatureSource, FEATURE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub min_records: usize,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 20,
            seed: 0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            min_records: 20,
            hidden: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: &str| Err(ProbeError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return bad("batch_size and hidden must be positive");
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("epsilon must be positive and weight_decay non-negative");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Stream seed for one option, so options train independently of order.
pub fn option_seed(seed: u64, task: TaskCode, option_id: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{task}:{option_id}"));
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Feature rows with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<bool>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<bool>) -> Self {
        assert_eq!(x.nrows(), y.len(), "one label per row");
        Dataset { x, y }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn from_records(records: &[&BinaryRecord], features: &dyn FeatureSource) -> Result<Self, ProbeError> {
        let mut x = Array2::zeros((records.len(), FEATURE_DIM));
        for (mut row, r) in x.axis_iter_mut(Axis(0)).zip(records) {
            let f = features.features(r)?;
            row.assign(&ndarray::ArrayView1::from(f.as_slice()));
        }
        Ok(Dataset::new(x, records.iter().map(|r| r.label).collect()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub params: MlpParams,
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub history: Vec<EpochStats>,
}

/// Trains on `train`, keeping the epoch with the highest validation accuracy.
///
/// After every epoch the parameters are rounded to f32 (the checkpoint
/// precision) and validation runs on that snapshot, so the stored checkpoint
/// reproduces its reported accuracy exactly. Ties keep the earlier epoch.
pub fn fit(train: &Dataset, val: &Dataset, config: &TrainConfig, stream_seed: u64) -> Result<FitOutcome, ProbeError> {
    config.validate()?;
    if train.len() < config.min_records {
        return Err(ProbeError::TooFewRecords {
            have: train.len(),
            need: config.min_records,
        });
    }
    if train.y.iter().all(|&y| y) || train.y.iter().all(|&y| !y) {
        return Err(ProbeError::DegenerateData);
    }
    if val.is_empty() {
        return Err(ProbeError::NoValidationRecords);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let mut params = MlpParams::init(train.x.ncols(), config.hidden, &mut rng);
    let mut state = AdamWState::new(&params);
    let adamw = config.adamw();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, MlpParams)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = train.x.select(Axis(0), batch);
            let y: Vec<bool> = batch.iter().map(|&i| train.y[i]).collect();
            let (grads, loss) = params.gradients(x.view(), &y)?;
            loss_sum += loss * batch.len() as f64;
            state.step(&adamw, &mut params, &grads);
        }
        if !params.is_finite() {
            return Err(ProbeError::NonFinite);
        }
        let snapshot = params.quantized();
        let (val_loss, val_accuracy) = snapshot.evaluate(val.x.view(), &val.y)?;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(_, acc, _)| val_accuracy > *acc) {
            best = Some((epoch, val_accuracy, snapshot));
        }
    }
    let (best_epoch, val_accuracy, params) = best.expect("at least one epoch");
    Ok(FitOutcome {
        params,
        best_epoch,
        val_accuracy,
        history,
    })
}

/// Trains the probe for one option from its records across all splits.
/// Test records are ignored.
pub fn train_option(
    task: TaskCode,
    option_id: &str,
    records: &[BinaryRecord],
    features: &dyn FeatureSource,
    config: &TrainConfig,
    provider_id: &str,
) -> Result<ProbeCheckpoint, ProbeError> {
    if let Some(r) = records.iter().find(|r| r.task != task || r.option_id != option_id) {
        return Err(ProbeError::ForeignRecord(format!(
            "{}/{}/{} passed to the probe for {task}/{option_id}",
            r.pair_id, r.task, r.option_id
        )));
    }
    let of = |split| records.iter().filter(|r| r.split == split).collect::<Vec<_>>();
    let (train_recs, val_recs) = (of(Split::Train), of(Split::Val));
    if train_recs.len() < config.min_records {
        return Err(ProbeError::TooFewRecords {
            have: train_recs.len(),
            need: config.min_records,
        });
    }
    let train = Dataset::from_records(&train_recs, features)?;
    let val = Dataset::from_records(&val_recs, features)?;
    let outcome = fit(&train, &val, config, option_seed(config.seed, task, option_id))?;
    Ok(ProbeCheckpoint {
        task,
        option_id: option_id.to_string(),
        provider_id: provider_id.to_string(),
        params: outcome.params,
        best_epoch: outcome.best_epoch,
        val_accuracy_at_best: outcome.val_accuracy,
        history: outcome.history,
        config: *config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 6), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let w = Array1::from(vec![1.0, -1.0, 0.5, 0.0, 0.0, 0.25]);
        let y = x.dot(&w).iter().map(|&v| v > 0.0).collect();
        Dataset::new(x, y)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            hidden: 8,
            batch_size: 16,
            learning_rate: 1e-2,
            ..Default::default()
        }
    }

    #[test]
    fn single_class_data_is_degenerate() {
        let mut d = toy(40, 1);
        d.y.iter_mut().for_each(|y| *y = true);
        assert!(matches!(fit(&d, &toy(10, 2), &small_config(), 0), Err(ProbeError::DegenerateData)));
    }

    #[test]
    fn too_few_records_is_reported() {
        assert!(matches!(
            fit(&toy(10, 1), &toy(10, 2), &small_config(), 0),
            Err(ProbeError::TooFewRecords { have: 10, need: 20 })
        ));
    }

    #[test]
    fn empty_validation_split_skips_the_option() {
        let empty = Dataset::new(Array2::zeros((0, 6)), vec![]);
        let err = fit(&toy(40, 1), &empty, &small_config(), 0).unwrap_err();
        assert!(matches!(err, ProbeError::NoValidationRecords));
        assert!(err.is_skippable());
    }

    #[test]
    fn best_epoch_is_the_first_maximum() {
        let out = fit(&toy(200, 1), &toy(60, 2), &small_config(), 7).unwrap();
        assert_eq!(out.history.len(), 20);
        let max = out.history.iter().map(|e| e.val_accuracy).fold(f64::MIN, f64::max);
        let first = out.history.iter().find(|e| e.val_accuracy == max).unwrap();
        assert_eq!(out.best_epoch, first.epoch);
        assert_eq!(out.val_accuracy, max);
        let val = toy(60, 2);
        assert_eq!(out.params.evaluate(val.x.view(), &val.y).unwrap().1, max);
    }

    #[test]
    fn same_seed_same_params() {
        let a = fit(&toy(100, 1), &toy(30, 2), &small_config(), 11).unwrap();
        let b = fit(&toy(100, 1), &toy(30, 2), &small_config(), 11).unwrap();
        assert_eq!(a, b);
        let c = fit(&toy(100, 1), &toy(30, 2), &small_config(), 12).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn option_seeds_differ_per_option() {
        let t: TaskCode = "F1QL".parse().unwrap();
        assert_ne!(option_seed(0, t, "too_thick"), option_seed(0, t, "broken_lines"));
        assert_eq!(option_seed(3, t, "too_thick"), option_seed(3, t, "too_thick"));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { beta2: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
    }
}
