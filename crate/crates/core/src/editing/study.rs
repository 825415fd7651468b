use serde::{Deserialize, Serialize};

use super::pipeline::EditContext;
use super::{EditJob, EditingError};
use crate::corpus::{BinaryRecord, Polarity, Split, TaskCode};
use crate::embedding::EmbeddingProvider;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub min_votes: u32,
    pub min_prob: f64,
    pub n: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            min_votes: 5,
            min_prob: 0.80,
            n: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCandidate {
    pub pair_id: String,
    pub task: TaskCode,
    pub option_id: String,
    pub votes_for: u32,
    pub votes_total: u32,
    pub probability: f64,
}

/// Candidates with enough crowd votes and probe confidence, highest
/// probability first (ties by pair, task, option), at most `n`.
pub fn select_candidates(mut candidates: Vec<StudyCandidate>, config: &StudyConfig) -> Vec<StudyCandidate> {
    candidates.retain(|c| c.votes_for >= config.min_votes && c.probability >= config.min_prob);
    candidates.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then_with(|| (&a.pair_id, a.task, &a.option_id).cmp(&(&b.pair_id, b.task, &b.option_id)))
    });
    candidates.truncate(config.n);
    candidates
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySample {
    pub pair_id: String,
    pub task: TaskCode,
    pub option_id: String,
    pub votes_for: u32,
    pub votes_total: u32,
    pub p_before: f64,
    pub p_after: f64,
    pub delta: f64,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub backend_id: String,
    pub requested: usize,
    pub qualifying: usize,
    /// Set when fewer than `requested` records qualified.
    pub shortfall: bool,
    pub samples: Vec<StudySample>,
    pub mean_delta: Option<f64>,
    pub median_delta: Option<f64>,
    pub improved: usize,
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

impl StudyReport {
    pub fn build(config: StudyConfig, backend_id: &str, candidates: &[StudyCandidate], jobs: &[EditJob]) -> Self {
        let samples: Vec<StudySample> = candidates
            .iter()
            .zip(jobs)
            .map(|(c, j)| StudySample {
                pair_id: c.pair_id.clone(),
                task: c.task,
                option_id: c.option_id.clone(),
                votes_for: c.votes_for,
                votes_total: c.votes_total,
                p_before: j.p_before,
                p_after: j.p_after,
                delta: j.delta,
                request_id: j.request_id.clone(),
            })
            .collect();
        let mut deltas: Vec<f64> = samples.iter().map(|s| s.delta).collect();
        let mean_delta = (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64);
        deltas.sort_by(f64::total_cmp);
        StudyReport {
            config,
            backend_id: backend_id.to_string(),
            requested: config.n,
            qualifying: candidates.len(),
            shortfall: candidates.len() < config.n,
            improved: samples.iter().filter(|s| s.delta > 0.0).count(),
            mean_delta,
            median_delta: median(&deltas),
            samples,
        }
    }
}

impl<P: EmbeddingProvider> EditContext<'_, P> {
    /// Scores every test record of an actionable defect option that has a
    /// probe on its padded tactile and applies the study filter.
    pub fn study_candidates(&self, records: &[BinaryRecord], config: &StudyConfig) -> Result<Vec<StudyCandidate>, EditingError> {
        let mut out = Vec::new();
        for r in records.iter().filter(|r| r.split == Split::Test && r.votes_for >= config.min_votes) {
            let Some(option) = self.registry.option(r.task, &r.option_id) else {
                continue;
            };
            if !option.actionable || option.polarity != Polarity::Defect {
                continue;
            }
            // No probe, no score.
            if self.checkpoints.get(r.task, &r.option_id).is_none() {
                continue;
            }
            let prepared = self.prepare(&r.pair_id)?;
            let probability = self.issue_probability(&prepared.natural, &prepared.padded_png, r.task, &r.option_id)?;
            out.push(StudyCandidate {
                pair_id: r.pair_id.clone(),
                task: r.task,
                option_id: r.option_id.clone(),
                votes_for: r.votes_for,
                votes_total: r.votes_total,
                probability,
            });
        }
        Ok(select_candidates(out, config))
    }

    /// Selects candidates and edits each one in order.
    pub fn run_study(&self, records: &[BinaryRecord], config: &StudyConfig) -> Result<StudyReport, EditingError> {
        let candidates = self.study_candidates(records, config)?;
        if candidates.len() < config.n {
            log::warn!("only {} of {} requested records qualify for the study", candidates.len(), config.n);
        }
        let jobs = candidates
            .iter()
            .map(|c| self.edit(&c.pair_id, c.task, Some(&c.option_id)).map(|(job, _)| job))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(StudyReport::build(*config, self.backend.id(), &candidates, &jobs))
    }
}
