//! Flat run configuration. Every key can come from the config file or from a
//! flag of the same name in kebab-case; flags win.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Deserialize;
use tactile_eval::aggregation::{BuildConfig, ThresholdMode, ThresholdPolicy};
use tactile_eval::corpus::Split;
use tactile_eval::editing::{HttpConfig, RetryPolicy, StudyConfig};
use tactile_eval::probe::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Hash-seeded vectors, for fixtures and offline runs.
    Fixture,
    /// Precomputed encoder outputs read from the embedding store.
    Store,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    MajorityVotes,
    RawFraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Taxonomy registry TOML (built-in when unset).
    #[arg(long, global = true)]
    pub registry: Option<PathBuf>,
    /// Edit template TOML (built-in when unset).
    #[arg(long, global = true)]
    pub templates: Option<PathBuf>,
    /// Ballot export CSV.
    #[arg(long, global = true)]
    pub ballots: Option<PathBuf>,
    /// Gold key CSV.
    #[arg(long, global = true)]
    pub gold_key: Option<PathBuf>,
    /// Binary records file (JSON lines).
    #[arg(long, global = true)]
    pub records: Option<PathBuf>,
    /// Image pair manifest CSV.
    #[arg(long, global = true)]
    pub pairs: Option<PathBuf>,
    /// Directory the pair manifest's image paths are relative to.
    #[arg(long, global = true)]
    pub images: Option<PathBuf>,
    /// Embedding store file.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Embedding source [default: fixture].
    #[arg(long, global = true, value_enum)]
    pub provider: Option<ProviderKind>,
    /// Probe checkpoint directory.
    #[arg(long, global = true)]
    pub checkpoints: Option<PathBuf>,
    /// Root of the edit job audit directory.
    #[arg(long, global = true)]
    pub jobs_dir: Option<PathBuf>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Label rule for non-texture options [default: majority-votes].
    #[arg(long, global = true, value_enum)]
    pub threshold_mode: Option<Mode>,
    /// Vote fraction used by raw-fraction mode [default: 0.6].
    #[arg(long, global = true)]
    pub default_fraction: Option<f64>,
    /// Texture options need a vote fraction above this [default: 0.4].
    #[arg(long, global = true)]
    pub texture_fraction: Option<f64>,
    /// Share of gold answers a ballot must match exactly [default: 1.0].
    #[arg(long, global = true)]
    pub gold_pass_fraction: Option<f64>,
    /// Identical ballots needed to promote a non-approved selection [default: 5].
    #[arg(long, global = true)]
    pub promote_min_agreement: Option<usize>,

    /// [default: 0.001]
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    /// [default: 128]
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// [default: 20]
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Decoupled AdamW weight decay [default: 0.01].
    #[arg(long, global = true)]
    pub weight_decay: Option<f64>,
    /// Probe hidden width [default: 512].
    #[arg(long, global = true)]
    pub hidden: Option<usize>,
    /// Options with fewer training records are skipped [default: 20].
    #[arg(long, global = true)]
    pub min_records: Option<usize>,
    /// Seeds initialization and shuffling [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Records split scored by `eval`.
    #[arg(long, global = true, value_enum)]
    pub split: Option<SplitArg>,

    /// Image-edit backend [default: mock].
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// HTTP edit endpoint URL.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Model name sent to the HTTP endpoint.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// HTTP request timeout [default: 180].
    #[arg(long, global = true)]
    pub timeout_secs: Option<u64>,
    /// Minimum spacing between HTTP requests [default: 1000].
    #[arg(long, global = true)]
    pub min_interval_ms: Option<u64>,
    /// Retries for rate-limited or transient failures [default: 3].
    #[arg(long, global = true)]
    pub max_retries: Option<u32>,
    /// Timestamp written into job metadata; the mock backend defaults to 0.
    #[arg(long, global = true)]
    pub fixed_time: Option<u64>,

    /// Study sample size [default: 15].
    #[arg(long, global = true)]
    pub study_n: Option<usize>,
    /// Study filter on positive votes [default: 5].
    #[arg(long, global = true)]
    pub min_votes: Option<u32>,
    /// Study filter on issue probability [default: 0.8].
    #[arg(long, global = true)]
    pub min_prob: Option<f64>,
}

macro_rules! overlay {
    ($flags:ident, $file:ident; $($field:ident),* $(,)?) => {
        Settings { $($field: $flags.$field.or($file.$field)),* }
    };
}

impl Settings {
    /// Reads a config file; relative paths in it resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut s: Settings = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut s.registry,
            &mut s.templates,
            &mut s.ballots,
            &mut s.gold_key,
            &mut s.records,
            &mut s.pairs,
            &mut s.images,
            &mut s.store,
            &mut s.checkpoints,
            &mut s.jobs_dir,
            &mut s.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(s)
    }

    pub fn overlay(self, file: Settings) -> Settings {
        let flags = self;
        overlay!(flags, file;
            registry, templates, ballots, gold_key, records, pairs, images, store, provider,
            checkpoints, jobs_dir, out, threshold_mode, default_fraction, texture_fraction,
            gold_pass_fraction, promote_min_agreement, learning_rate, batch_size, epochs,
            weight_decay, hidden, min_records, seed, jobs, split, backend, endpoint, model,
            timeout_secs, min_interval_ms, max_retries, fixed_time, study_n, min_votes, min_prob,
        )
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        let Some(p) = value.as_deref() else {
            bail!("missing input: --{} (or `{}` in the config file)", key.replace('_', "-"), key);
        };
        if !p.exists() {
            bail!("missing input: {} does not exist", p.display());
        }
        Ok(p)
    }

    pub fn output<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .with_context(|| format!("missing output: --{} (or `{}` in the config file)", key.replace('_', "-"), key))
    }

    pub fn policy(&self) -> ThresholdPolicy {
        let mut p = ThresholdPolicy::default();
        if let Some(m) = self.threshold_mode {
            p.mode = match m {
                Mode::MajorityVotes => ThresholdMode::MajorityVotes,
                Mode::RawFraction => ThresholdMode::RawFraction,
            };
        }
        if let Some(f) = self.default_fraction {
            p.default_fraction = f;
        }
        if let Some(f) = self.texture_fraction {
            p.texture_fraction = f;
        }
        p
    }

    pub fn build_config(&self) -> BuildConfig {
        let mut c = BuildConfig {
            policy: self.policy(),
            ..Default::default()
        };
        if let Some(f) = self.gold_pass_fraction {
            c.gold_pass_fraction = f;
        }
        if let Some(n) = self.promote_min_agreement {
            c.consensus.promote_min_agreement = n;
        }
        c
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::default();
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { c.$field = v; })* };
        }
        set!(learning_rate, batch_size, epochs, weight_decay, hidden, min_records, seed);
        c.validate().context("invalid training configuration")?;
        Ok(c)
    }

    pub fn split(&self) -> Split {
        self.split.map(Split::from).unwrap_or(Split::Test)
    }

    pub fn http_config(&self) -> HttpConfig {
        let mut c = HttpConfig::default();
        if let Some(e) = &self.endpoint {
            c.endpoint = e.clone();
        }
        if let Some(m) = &self.model {
            c.model = m.clone();
        }
        if let Some(t) = self.timeout_secs {
            c.timeout = Duration::from_secs(t);
        }
        if let Some(ms) = self.min_interval_ms {
            c.min_interval = Duration::from_millis(ms);
        }
        c
    }

    pub fn retry(&self) -> RetryPolicy {
        let mut r = RetryPolicy::default();
        if let Some(n) = self.max_retries {
            r.max_retries = n;
        }
        if self.backend() == BackendKind::Mock {
            r.base_delay = Duration::ZERO;
        }
        r
    }

    pub fn backend(&self) -> BackendKind {
        self.backend.unwrap_or(BackendKind::Mock)
    }

    pub fn provider(&self) -> ProviderKind {
        self.provider.unwrap_or(ProviderKind::Fixture)
    }

    pub fn study_config(&self) -> StudyConfig {
        let mut c = StudyConfig::default();
        if let Some(n) = self.study_n {
            c.n = n;
        }
        if let Some(v) = self.min_votes {
            c.min_votes = v;
        }
        if let Some(p) = self.min_prob {
            c.min_prob = p;
        }
        c
    }
}
