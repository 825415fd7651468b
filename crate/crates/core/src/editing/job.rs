use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::EditingError;
use crate::corpus::TaskCode;

pub const PROMPT_FILE: &str = "prompt.txt";
pub const IMAGE_FILE: &str = "edited.png";
pub const META_FILE: &str = "meta.json";

/// Seconds since the Unix epoch.
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// Always reports the same instant; used for reproducible offline runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now(&self) -> u64 {
        self.0
    }
}

/// Audit record for one edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditJob {
    pub pair_id: String,
    pub task: TaskCode,
    pub option_id: String,
    pub template_key: String,
    pub prompt: String,
    pub prompt_sha256: String,
    pub original_size: [u32; 2],
    pub padded_side: u32,
    pub pad_offset: [u32; 2],
    pub backend_id: String,
    pub request_id: String,
    pub attempts: u32,
    pub output_ref: String,
    pub output_sha256: String,
    pub embedding_provider: String,
    pub p_before: f64,
    pub p_after: f64,
    pub delta: f64,
    pub started_at: u64,
    pub finished_at: u64,
}

pub fn job_dir(jobs_root: &Path, pair_id: &str, task: TaskCode, option_id: &str) -> PathBuf {
    jobs_root.join(pair_id).join(task.to_string()).join(option_id)
}

fn check_component(s: &str) -> Result<(), EditingError> {
    if s.is_empty() || s == "." || s == ".." || s.contains(['/', '\\']) {
        return Err(EditingError::InvalidJobPath(s.to_string()));
    }
    Ok(())
}

static PARTIAL_SEQ: AtomicU64 = AtomicU64::new(0);

/// Writes `prompt.txt`, `edited.png` and `meta.json` into a staging
/// directory, then renames it into place. An existing job directory is never
/// touched.
pub fn write_job(jobs_root: &Path, job: &EditJob, edited_png: &[u8]) -> Result<PathBuf, EditingError> {
    check_component(&job.pair_id)?;
    check_component(&job.option_id)?;
    let dir = job_dir(jobs_root, &job.pair_id, job.task, &job.option_id);
    if dir.exists() {
        return Err(EditingError::JobExists(dir.display().to_string()));
    }
    let parent = dir.parent().expect("job dir has a parent");
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| EditingError::Io { path, source }
    };
    std::fs::create_dir_all(parent).map_err(io(parent))?;
    let staging = parent.join(format!(
        ".{}.partial-{}-{}",
        job.option_id,
        std::process::id(),
        PARTIAL_SEQ.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        std::fs::create_dir(&staging).map_err(io(&staging))?;
        let mut meta = serde_json::to_string_pretty(job).expect("job serializes");
        meta.push('\n');
        for (name, bytes) in [
            (PROMPT_FILE, job.prompt.as_bytes()),
            (IMAGE_FILE, edited_png),
            (META_FILE, meta.as_bytes()),
        ] {
            let path = staging.join(name);
            std::fs::write(&path, bytes).map_err(io(&path))?;
        }
        if dir.exists() {
            return Err(EditingError::JobExists(dir.display().to_string()));
        }
        std::fs::rename(&staging, &dir).map_err(io(&dir))
    })();
    if result.is_err() {
        let _ = std::fs::remove_dir_all(&staging);
    }
    result.map(|()| dir)
}

pub fn read_job(dir: &Path) -> Result<EditJob, EditingError> {
    let path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&path).map_err(|source| EditingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| EditingError::MalformedJob(e.to_string()))
}
