//! Probe-guided tactile repair: pick the worst actionable issue, frame a
//! repair prompt, send the padded tactile to an edit backend, and re-score
//! the result with the same probe.

mod backend;
mod image;
mod job;
mod pipeline;
mod study;
mod templates;

pub use self::image::{decode, encode_png, pad_image, pad_square, PaddedImage};
pub use backend::{
    prompt_digest, submit_with_retry, BackendError, EditBackend, EditRequest, EditResponse, HttpBackend, HttpConfig,
    MockBackend, RetryPolicy, SubmitError, Submission, API_KEY_ENV,
};
pub use job::{job_dir, read_job, write_job, Clock, EditJob, FixedClock, SystemClock, IMAGE_FILE, META_FILE, PROMPT_FILE};
pub use pipeline::{EditContext, Rescore};
pub use study::{select_candidates, StudyCandidate, StudyConfig, StudyReport, StudySample};
pub use templates::{FamilyFrame, TemplateRegistry, GUARDRAILS};

use serde::Serialize;
use thiserror::Error;

use crate::corpus::Polarity;
use crate::embedding::EmbeddingError;
use crate::probe::ProbeError;

#[derive(Debug, Error)]
pub enum EditingError {
    #[error("malformed template registry: {0}")]
    MalformedTemplates(String),
    #[error("unknown template key {0:?}")]
    UnknownTemplate(String),
    #[error("unknown family {0:?}")]
    UnknownFamily(String),
    #[error("no actionable defect option to repair")]
    NoActionableIssue,
    #[error("option {0} is not an actionable defect")]
    NotActionable(String),
    #[error("undecodable image: {0}")]
    UndecodableImage(String),
    #[error("unknown pair {0:?}")]
    UnknownPair(String),
    #[error("edit backend failed: {0}")]
    Backend(#[from] SubmitError),
    #[error("job directory already exists: {0}")]
    JobExists(String),
    #[error("refusing job path component {0:?}")]
    InvalidJobPath(String),
    #[error("malformed job metadata: {0}")]
    MalformedJob(String),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One option's probe output on a pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IssueScore {
    pub option_id: String,
    pub polarity: Polarity,
    pub raw_sigmoid: f64,
    pub issue_probability: f64,
    pub actionable: bool,
}

/// `p` for defect options, `1 − p` for pass options.
pub fn issue_probability(polarity: Polarity, raw_sigmoid: f64) -> f64 {
    match polarity {
        Polarity::Defect => raw_sigmoid,
        Polarity::Pass => 1.0 - raw_sigmoid,
    }
}

impl IssueScore {
    pub fn new(option_id: impl Into<String>, polarity: Polarity, raw_sigmoid: f64, actionable: bool) -> Self {
        IssueScore {
            option_id: option_id.into(),
            polarity,
            raw_sigmoid,
            issue_probability: issue_probability(polarity, raw_sigmoid),
            actionable,
        }
    }

    pub fn is_repairable(&self) -> bool {
        self.actionable && self.polarity == Polarity::Defect
    }
}

/// Highest issue probability among actionable defect options; ties go to
/// the lexicographically smallest id.
pub fn select_top_issue(scores: &[IssueScore]) -> Result<&IssueScore, EditingError> {
    scores
        .iter()
        .filter(|s| s.is_repairable())
        .min_by(|a, b| {
            b.issue_probability
                .total_cmp(&a.issue_probability)
                .then_with(|| a.option_id.cmp(&b.option_id))
        })
        .ok_or(EditingError::NoActionableIssue)
}
