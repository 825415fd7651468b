use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{prompt_digest, submit_with_retry, EditBackend, EditRequest, RetryPolicy};
use super::image::{pad_square, PaddedImage};
use super::job::{read_job, write_job, Clock, EditJob, IMAGE_FILE};
use super::{issue_probability, select_top_issue, EditingError, IssueScore, TemplateRegistry};
use crate::corpus::{ImagePair, Registry, TaskCode};
use crate::embedding::{assemble_features, option_prompt, EmbeddingCache, EmbeddingProvider};
use crate::probe::CheckpointSet;

/// Issue probability before and after an edit; positive delta is an improvement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescore {
    pub p_before: f64,
    pub p_after: f64,
    pub delta: f64,
}

impl Rescore {
    pub fn new(p_before: f64, p_after: f64) -> Self {
        Rescore {
            p_before,
            p_after,
            delta: p_before - p_after,
        }
    }
}

/// Everything the edit loop needs, borrowed from the caller.
pub struct EditContext<'a, P> {
    pub registry: &'a Registry,
    pub templates: &'a TemplateRegistry,
    pub checkpoints: &'a CheckpointSet,
    pub cache: &'a EmbeddingCache<P>,
    pub pairs: &'a BTreeMap<String, ImagePair>,
    pub image_root: &'a Path,
    pub backend: &'a dyn EditBackend,
    pub clock: &'a dyn Clock,
    pub retry: RetryPolicy,
    pub jobs_dir: &'a Path,
}

/// A pair's natural image and its padded tactile, ready for scoring.
pub struct PreparedPair<'a> {
    pub pair: &'a ImagePair,
    pub natural: Vec<u8>,
    pub padded: PaddedImage,
    pub padded_png: Vec<u8>,
}

fn read(path: &Path) -> Result<Vec<u8>, EditingError> {
    std::fs::read(path).map_err(|source| EditingError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl<'a, P: EmbeddingProvider> EditContext<'a, P> {
    pub fn prepare(&self, pair_id: &str) -> Result<PreparedPair<'a>, EditingError> {
        let pair = self
            .pairs
            .get(pair_id)
            .ok_or_else(|| EditingError::UnknownPair(pair_id.to_string()))?;
        let natural = read(&pair.natural_path(self.image_root))?;
        let padded = pad_square(&read(&pair.tactile_path(self.image_root))?)?;
        let padded_png = padded.to_png();
        Ok(PreparedPair {
            pair,
            natural,
            padded,
            padded_png,
        })
    }

    /// Raw sigmoid of the option's probe on an image pair.
    pub fn raw_probability(&self, natural: &[u8], tactile: &[u8], task: TaskCode, option_id: &str) -> Result<f64, EditingError> {
        let option = self
            .registry
            .option(task, option_id)
            .ok_or_else(|| EditingError::NotActionable(format!("{task}/{option_id}")))?;
        let probe = self.checkpoints.require(task, option_id)?;
        let n = self.cache.image(natural)?;
        let t = self.cache.image(tactile)?;
        let text = self.cache.text(&option_prompt(task, option))?;
        Ok(probe.probability(&assemble_features(&n, &t, &text)?)?)
    }

    pub fn issue_probability(&self, natural: &[u8], tactile: &[u8], task: TaskCode, option_id: &str) -> Result<f64, EditingError> {
        let raw = self.raw_probability(natural, tactile, task, option_id)?;
        let polarity = self.registry.option(task, option_id).expect("checked above").polarity;
        Ok(issue_probability(polarity, raw))
    }

    /// One score per option of `task` that has a probe. Options skipped at
    /// training time are left out; a task with no probes at all is an error.
    pub fn score_images(&self, natural: &[u8], tactile: &[u8], task: TaskCode) -> Result<Vec<IssueScore>, EditingError> {
        let options: Vec<_> = self
            .registry
            .options(task)
            .iter()
            .filter(|o| self.checkpoints.get(task, &o.option_id).is_some())
            .collect();
        if options.is_empty() {
            let first = self.registry.options(task).first().map(|o| o.option_id.as_str()).unwrap_or_default();
            self.checkpoints.require(task, first)?;
        }
        options
            .into_iter()
            .map(|o| {
                let raw = self.raw_probability(natural, tactile, task, &o.option_id)?;
                Ok(IssueScore::new(o.option_id.clone(), o.polarity, raw, o.actionable))
            })
            .collect()
    }

    /// Scores a pair with its tactile padded exactly as it would be sent for editing.
    pub fn score_pair(&self, pair_id: &str, task: TaskCode) -> Result<Vec<IssueScore>, EditingError> {
        let prepared = self.prepare(pair_id)?;
        self.score_images(&prepared.natural, &prepared.padded_png, task)
    }

    pub fn rescore(&self, natural: &[u8], before: &[u8], after: &[u8], task: TaskCode, option_id: &str) -> Result<Rescore, EditingError> {
        Ok(Rescore::new(
            self.issue_probability(natural, before, task, option_id)?,
            self.issue_probability(natural, after, task, option_id)?,
        ))
    }

    /// Runs one edit job. Without `option_id` the top actionable issue is repaired.
    pub fn edit(&self, pair_id: &str, task: TaskCode, option_id: Option<&str>) -> Result<(EditJob, PathBuf), EditingError> {
        let started_at = self.clock.now();
        let prepared = self.prepare(pair_id)?;
        let scores = self.score_images(&prepared.natural, &prepared.padded_png, task)?;
        let chosen = match option_id {
            None => select_top_issue(&scores)?,
            Some(id) => scores
                .iter()
                .find(|s| s.option_id == id && s.is_repairable())
                .ok_or_else(|| EditingError::NotActionable(format!("{task}/{id}")))?,
        };
        let option = self.registry.option(task, &chosen.option_id).expect("scored option exists");
        let template_key = option
            .template_key
            .clone()
            .ok_or_else(|| EditingError::NotActionable(option.option_id.clone()))?;
        let prompt = self.templates.build_prompt(task.family, &template_key)?;

        let request = EditRequest {
            image_png: prepared.padded_png.clone(),
            prompt: prompt.clone(),
            size: prepared.padded.side(),
        };
        let submission = submit_with_retry(self.backend, &request, &self.retry)?;
        let edited = submission.response.image;
        let p_after = self.issue_probability(&prepared.natural, &edited, task, &option.option_id)?;
        let rescore = Rescore::new(chosen.issue_probability, p_after);

        let job = EditJob {
            pair_id: pair_id.to_string(),
            task,
            option_id: option.option_id.clone(),
            template_key,
            prompt_sha256: prompt_digest(&prompt),
            prompt,
            original_size: [prepared.padded.original_size.0, prepared.padded.original_size.1],
            padded_side: prepared.padded.side(),
            pad_offset: [prepared.padded.offset.0, prepared.padded.offset.1],
            backend_id: self.backend.id().to_string(),
            request_id: submission.response.request_id,
            attempts: submission.attempts,
            output_ref: IMAGE_FILE.to_string(),
            output_sha256: hex::encode(Sha256::digest(&edited)),
            embedding_provider: self.cache.provider().id().to_string(),
            p_before: rescore.p_before,
            p_after: rescore.p_after,
            delta: rescore.delta,
            started_at,
            finished_at: self.clock.now(),
        };
        let dir = write_job(self.jobs_dir, &job, &edited)?;
        Ok((job, dir))
    }

    /// Recomputes both scores for a stored job with the current probes.
    pub fn rescore_job(&self, dir: &Path) -> Result<(EditJob, Rescore), EditingError> {
        let job = read_job(dir)?;
        let prepared = self.prepare(&job.pair_id)?;
        let edited = read(&dir.join(&job.output_ref))?;
        let fresh = self.rescore(&prepared.natural, &prepared.padded_png, &edited, job.task, &job.option_id)?;
        Ok((job, fresh))
    }
}
