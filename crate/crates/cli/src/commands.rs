use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;
use tactile_eval::aggregation::{build_dataset, read_ballots, read_gold_key};
use tactile_eval::corpus::{load_registry, read_pairs, read_records, write_records, BinaryRecord, ImagePair, Registry, TaskCode};
use tactile_eval::editing::{
    read_job, Clock, EditBackend, EditContext, FixedClock, HttpBackend, MockBackend, SystemClock, TemplateRegistry,
};
use tactile_eval::embedding::{
    Embedding, EmbeddingCache, EmbeddingError, EmbeddingProvider, EmbeddingStore, FeatureSource, FixtureProvider,
    PairFeatureSource, StoreProvider,
};
use tactile_eval::evaluation::{evaluate, export_curves, export_report, family_ordering};
use tactile_eval::probe::{train_option, CheckpointSet, ProbeCheckpoint, ProbeError};

use crate::config::{BackendKind, ProviderKind, Settings};

/// The embedding provider selected for this run.
pub enum Provider {
    Fixture(FixtureProvider),
    Store(StoreProvider),
}

impl EmbeddingProvider for Provider {
    fn id(&self) -> &str {
        match self {
            Provider::Fixture(p) => p.id(),
            Provider::Store(p) => p.id(),
        }
    }

    fn embed_image(&self, bytes: &[u8]) -> Result<Embedding, EmbeddingError> {
        match self {
            Provider::Fixture(p) => p.embed_image(bytes),
            Provider::Store(p) => p.embed_image(bytes),
        }
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        match self {
            Provider::Fixture(p) => p.embed_text(text),
            Provider::Store(p) => p.embed_text(text),
        }
    }
}

fn templates(s: &Settings) -> Result<TemplateRegistry> {
    Ok(match &s.templates {
        Some(_) => TemplateRegistry::load(s.require(&s.templates, "templates")?)?,
        None => TemplateRegistry::builtin(),
    })
}

fn registry(s: &Settings, templates: &TemplateRegistry) -> Result<Registry> {
    Ok(match &s.registry {
        Some(_) => load_registry(s.require(&s.registry, "registry")?, templates)?,
        None => {
            let r = Registry::builtin();
            r.check_templates(|k| templates.contains(k))?;
            r
        }
    })
}

fn records(s: &Settings, registry: &Registry) -> Result<Vec<BinaryRecord>> {
    Ok(read_records(s.require(&s.records, "records")?, registry)?.records)
}

fn cache(s: &Settings) -> Result<EmbeddingCache<Provider>> {
    Ok(match s.provider() {
        ProviderKind::Fixture => match &s.store {
            Some(path) => EmbeddingCache::open(Provider::Fixture(FixtureProvider), path)?,
            None => EmbeddingCache::new(Provider::Fixture(FixtureProvider)),
        },
        ProviderKind::Store => {
            let store = EmbeddingStore::load(s.require(&s.store, "store")?)?;
            EmbeddingCache::new(Provider::Store(StoreProvider::new(store)))
        }
    })
}

fn task_code(text: &str, registry: &Registry) -> Result<TaskCode> {
    let t: TaskCode = text.parse().map_err(|e: String| anyhow::anyhow!(e))?;
    if registry.options(t).is_empty() {
        bail!("unknown task {t}");
    }
    Ok(t)
}

/// Everything the feature, probe and edit stages share.
struct Inputs {
    registry: Registry,
    templates: TemplateRegistry,
    pairs: BTreeMap<String, ImagePair>,
    images: std::path::PathBuf,
    cache: EmbeddingCache<Provider>,
}

impl Inputs {
    fn load(s: &Settings) -> Result<Inputs> {
        let templates = templates(s)?;
        let registry = registry(s, &templates)?;
        let pairs = read_pairs(s.require(&s.pairs, "pairs")?)?;
        let images = s.require(&s.images, "images")?.to_path_buf();
        Ok(Inputs {
            registry,
            templates,
            pairs,
            images,
            cache: cache(s)?,
        })
    }

    fn features(&self) -> PairFeatureSource<'_, Provider> {
        PairFeatureSource::new(&self.registry, &self.pairs, self.images.clone(), &self.cache)
    }
}

pub fn aggregate(s: &Settings, out: &mut dyn Write) -> Result<()> {
    let templates = templates(s)?;
    let registry = registry(s, &templates)?;
    let ballots = read_ballots(s.require(&s.ballots, "ballots")?)?;
    let gold = read_gold_key(s.require(&s.gold_key, "gold_key")?)?;
    let target = s.output(&s.out, "out")?;
    let (records, summary) = build_dataset(&ballots, &registry, &gold, &s.build_config())?;
    let mut buf = Vec::new();
    write_records(&records, &mut buf)?;
    write_atomic(target, &buf)?;
    let counts = tactile_eval::corpus::SplitCounts::of(&records);
    writeln!(
        out,
        "{}",
        json!({ "records": records.len(), "train": counts.train, "val": counts.val, "test": counts.test, "summary": summary })
    )?;
    Ok(())
}

pub fn features(s: &Settings, out: &mut dyn Write) -> Result<()> {
    let inputs = Inputs::load(s)?;
    let records = records(s, &inputs.registry)?;
    let source = inputs.features();
    let failures: Vec<String> = records
        .par_iter()
        .filter_map(|r| source.features(r).err().map(|e| format!("{}/{}/{}: {e}", r.pair_id, r.task, r.option_id)))
        .collect();
    if let Some(first) = failures.first() {
        bail!("{} records have no features; first: {first}", failures.len());
    }
    if s.provider() == ProviderKind::Fixture {
        inputs.cache.persist(s.output(&s.store, "store")?)?;
    }
    writeln!(
        out,
        "{}",
        json!({ "records": records.len(), "embeddings": inputs.cache.len(), "provider": inputs.cache.provider().id() })
    )?;
    Ok(())
}

pub fn train(s: &Settings, task: Option<&str>, option: Option<&str>, out: &mut dyn Write) -> Result<()> {
    let inputs = Inputs::load(s)?;
    let records = records(s, &inputs.registry)?;
    let config = s.train_config()?;
    let dir = s.output(&s.checkpoints, "checkpoints")?;
    let task = task.map(|t| task_code(t, &inputs.registry)).transpose()?;
    if option.is_some() && task.is_none() {
        bail!("--option needs --task");
    }
    let targets: Vec<(TaskCode, String)> = inputs
        .registry
        .all_options()
        .filter(|o| task.is_none_or(|t| o.task == t))
        .filter(|o| option.is_none_or(|id| o.option_id == id))
        .map(|o| (o.task, o.option_id.clone()))
        .collect();
    if targets.is_empty() {
        bail!("no options match the selection");
    }
    let mut by_option: BTreeMap<(TaskCode, &str), Vec<BinaryRecord>> = BTreeMap::new();
    for r in &records {
        by_option.entry((r.task, r.option_id.as_str())).or_default().push(r.clone());
    }
    let source = inputs.features();
    let provider = inputs.cache.provider().id().to_string();
    let results: Vec<(TaskCode, String, Result<ProbeCheckpoint, ProbeError>)> = targets
        .par_iter()
        .map(|(t, o)| {
            let rs = by_option.get(&(*t, o.as_str())).map(Vec::as_slice).unwrap_or(&[]);
            (*t, o.clone(), train_option(*t, o, rs, &source, &config, &provider))
        })
        .collect();

    let (mut trained, mut skipped) = (0, 0);
    for (t, o, result) in results {
        match result {
            Ok(c) => {
                c.save(&tactile_eval::probe::checkpoint_path(dir, t, &o))?;
                trained += 1;
                writeln!(
                    out,
                    "{}",
                    json!({ "task": t.to_string(), "option_id": o, "best_epoch": c.best_epoch, "val_accuracy": c.val_accuracy_at_best })
                )?;
            }
            Err(e) if e.is_skippable() => {
                skipped += 1;
                log::warn!("skipping {t}/{o}: {e}");
                writeln!(out, "{}", json!({ "task": t.to_string(), "option_id": o, "skipped": e.to_string() }))?;
            }
            Err(e) => return Err(e).with_context(|| format!("training {t}/{o}")),
        }
    }
    if trained == 0 {
        bail!("no probe could be trained ({skipped} skipped)");
    }
    Ok(())
}

pub fn eval(s: &Settings, out: &mut dyn Write) -> Result<()> {
    let inputs = Inputs::load(s)?;
    let split = s.split();
    let records: Vec<BinaryRecord> = records(s, &inputs.registry)?.into_iter().filter(|r| r.split == split).collect();
    if records.is_empty() {
        bail!("no {split} records");
    }
    let checkpoints = CheckpointSet::load_dir(s.require(&s.checkpoints, "checkpoints")?)?;
    // Options skipped at training time have no probe; their records are
    // counted but not scored.
    let (records, unscored): (Vec<_>, Vec<_>) =
        records.into_iter().partition(|r| checkpoints.get(r.task, &r.option_id).is_some());
    if !unscored.is_empty() {
        log::warn!("{} {split} records belong to options without a probe", unscored.len());
    }
    if records.is_empty() {
        bail!("no {split} record has a trained probe");
    }
    let report = evaluate(&checkpoints, &records, &inputs.features())?;
    if let Some(dir) = &s.out {
        export_report(&report, &inputs.registry, dir)?;
    }
    writeln!(out, "{:<4} {:<28} {:>8} {:>8} {:>9}", "", "family", "correct", "total", "accuracy")?;
    for (f, acc) in family_ordering(&report) {
        let t = report.per_family[&f];
        writeln!(out, "{:<4} {:<28} {:>8} {:>8} {:>8.2}%", f, inputs.registry.family_name(f), t.correct, t.total, acc * 100.0)?;
    }
    let o = report.overall;
    writeln!(out, "{:<4} {:<28} {:>8} {:>8} {:>8.2}%", "", "overall", o.correct, o.total, o.accuracy().unwrap_or(0.0) * 100.0)?;
    if !unscored.is_empty() {
        writeln!(out, "{} records not scored (no probe for their option)", unscored.len())?;
    }
    Ok(())
}

fn backend(s: &Settings) -> Result<(Box<dyn EditBackend>, Box<dyn Clock>)> {
    Ok(match s.backend() {
        BackendKind::Mock => (Box::new(MockBackend::new()), Box::new(FixedClock(s.fixed_time.unwrap_or(0)))),
        BackendKind::Http => {
            let clock: Box<dyn Clock> = match s.fixed_time {
                Some(t) => Box::new(FixedClock(t)),
                None => Box::new(SystemClock),
            };
            (Box::new(HttpBackend::from_env(s.http_config())?), clock)
        }
    })
}

fn with_context<T>(
    s: &Settings,
    inputs: &Inputs,
    body: impl FnOnce(&EditContext<'_, Provider>) -> Result<T>,
) -> Result<T> {
    let checkpoints = CheckpointSet::load_dir(s.require(&s.checkpoints, "checkpoints")?)?;
    let (backend, clock) = backend(s)?;
    let jobs_dir = s.output(&s.jobs_dir, "jobs_dir")?;
    let ctx = EditContext {
        registry: &inputs.registry,
        templates: &inputs.templates,
        checkpoints: &checkpoints,
        cache: &inputs.cache,
        pairs: &inputs.pairs,
        image_root: &inputs.images,
        backend: backend.as_ref(),
        clock: clock.as_ref(),
        retry: s.retry(),
        jobs_dir,
    };
    body(&ctx)
}

pub fn score(s: &Settings, pair: &str, task: &str, out: &mut dyn Write) -> Result<()> {
    let inputs = Inputs::load(s)?;
    let task = task_code(task, &inputs.registry)?;
    let checkpoints = CheckpointSet::load_dir(s.require(&s.checkpoints, "checkpoints")?)?;
    let ctx = EditContext {
        registry: &inputs.registry,
        templates: &inputs.templates,
        checkpoints: &checkpoints,
        cache: &inputs.cache,
        pairs: &inputs.pairs,
        image_root: &inputs.images,
        backend: &MockBackend::new(),
        clock: &FixedClock(0),
        retry: s.retry(),
        jobs_dir: Path::new(""),
    };
    let scores = ctx.score_pair(pair, task)?;
    let top = tactile_eval::editing::select_top_issue(&scores).ok().map(|t| t.option_id.clone());
    for sc in &scores {
        writeln!(out, "{}", json!({ "pair_id": pair, "task": task.to_string(), "score": sc, "top": top.as_deref() == Some(sc.option_id.as_str()) }))?;
    }
    Ok(())
}

pub fn edit(s: &Settings, pair: &str, task: &str, option: Option<&str>, out: &mut dyn Write) -> Result<()> {
    let inputs = Inputs::load(s)?;
    let task = task_code(task, &inputs.registry)?;
    let (job, dir) = with_context(s, &inputs, |ctx| Ok(ctx.edit(pair, task, option)?))?;
    writeln!(out, "{}", json!({ "job_dir": dir, "job": job }))?;
    Ok(())
}

pub fn rescore(s: &Settings, job_dir: &Path, out: &mut dyn Write) -> Result<()> {
    let inputs = Inputs::load(s)?;
    read_job(job_dir).with_context(|| format!("reading job {}", job_dir.display()))?;
    let (job, fresh) = with_context(s, &inputs, |ctx| Ok(ctx.rescore_job(job_dir)?))?;
    writeln!(
        out,
        "{}",
        json!({
            "job_dir": job_dir,
            "stored": { "p_before": job.p_before, "p_after": job.p_after, "delta": job.delta },
            "fresh": fresh,
        })
    )?;
    Ok(())
}

pub fn study(s: &Settings, out: &mut dyn Write) -> Result<()> {
    let inputs = Inputs::load(s)?;
    let records = records(s, &inputs.registry)?;
    let config = s.study_config();
    let report = with_context(s, &inputs, |ctx| Ok(ctx.run_study(&records, &config)?))?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &s.out {
        write_atomic(path, format!("{text}\n").as_bytes())?;
    }
    writeln!(out, "{text}")?;
    Ok(())
}

pub fn report(s: &Settings, out: &mut dyn Write) -> Result<()> {
    let checkpoints = CheckpointSet::load_dir(s.require(&s.checkpoints, "checkpoints")?)?;
    let dir = s.output(&s.out, "out")?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut curves = Vec::new();
    let rows = export_curves(checkpoints.iter(), &mut curves)?;
    write_atomic(&dir.join("curves.csv"), &curves)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "option_id", "provider", "best_epoch", "val_accuracy"])?;
    for c in checkpoints.iter() {
        w.write_record([
            c.task.to_string(),
            c.option_id.clone(),
            c.provider_id.clone(),
            c.best_epoch.to_string(),
            c.val_accuracy_at_best.to_string(),
        ])?;
    }
    write_atomic(&dir.join("probes.csv"), &w.into_inner()?)?;
    writeln!(out, "{}", json!({ "probes": checkpoints.len(), "curve_rows": rows, "out": dir }))?;
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}
