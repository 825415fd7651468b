//! Accuracy reports at option, task, family and overall level.
//!
//! Every aggregate is record-weighted: a family's accuracy is its correct
//! records over its records, not a mean of task accuracies. Task-macro family
//! means are reported separately and labeled as such.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{BinaryRecord, FamilyCode, Registry, TaskCode};
use crate::embedding::FeatureSource;
use crate::probe::{predict, CheckpointSet, ProbeCheckpoint, ProbeError};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
    }

    pub fn merge(&mut self, other: Tally) {
        self.correct += other.correct;
        self.total += other.total;
    }

    /// `None` when there are no records.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

pub type OptionKey = (TaskCode, String);

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_option: BTreeMap<OptionKey, Tally>,
    pub per_task: BTreeMap<TaskCode, Tally>,
    pub per_family: BTreeMap<FamilyCode, Tally>,
    pub overall: Tally,
}

impl EvalReport {
    /// Builds a report from (task, option, prediction correct) outcomes.
    pub fn from_outcomes<'a>(outcomes: impl IntoIterator<Item = (TaskCode, &'a str, bool)>) -> Self {
        let mut per_option: BTreeMap<OptionKey, Tally> = BTreeMap::new();
        for (task, option, correct) in outcomes {
            per_option.entry((task, option.to_string())).or_default().add(correct);
        }
        let mut report = EvalReport::default();
        for ((task, _), tally) in &per_option {
            report.per_task.entry(*task).or_default().merge(*tally);
            report.per_family.entry(task.family).or_default().merge(*tally);
            report.overall.merge(*tally);
        }
        report.per_option = per_option;
        report
    }

    /// Mean of task accuracies within each family (not record-weighted).
    pub fn family_task_macro(&self) -> BTreeMap<FamilyCode, f64> {
        let mut acc: BTreeMap<FamilyCode, (f64, usize)> = BTreeMap::new();
        for (task, tally) in &self.per_task {
            if let Some(a) = tally.accuracy() {
                let e = acc.entry(task.family).or_default();
                e.0 += a;
                e.1 += 1;
            }
        }
        acc.into_iter().map(|(f, (sum, n))| (f, sum / n as f64)).collect()
    }
}

/// Runs each record's probe and tallies correctness at threshold 0.5.
pub fn evaluate(
    checkpoints: &CheckpointSet,
    records: &[BinaryRecord],
    features: &dyn FeatureSource,
) -> Result<EvalReport, EvaluationError> {
    let mut outcomes = Vec::with_capacity(records.len());
    for r in records {
        let probe = checkpoints.require(r.task, &r.option_id)?;
        let x = features.features(r).map_err(ProbeError::from)?;
        outcomes.push((r.task, r.option_id.as_str(), predict(probe.logit(&x)?) == r.label));
    }
    Ok(EvalReport::from_outcomes(outcomes))
}

fn descending<K: Ord + Clone>(items: impl Iterator<Item = (K, Tally)>) -> Vec<(K, f64)> {
    let mut v: Vec<(K, f64)> = items.filter_map(|(k, t)| t.accuracy().map(|a| (k, a))).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

/// Tasks from easiest to hardest; equal accuracies in code order.
pub fn difficulty_ordering(report: &EvalReport) -> Vec<(TaskCode, f64)> {
    descending(report.per_task.iter().map(|(k, t)| (*k, *t)))
}

/// Families by record-weighted accuracy, highest first.
pub fn family_ordering(report: &EvalReport) -> Vec<(FamilyCode, f64)> {
    descending(report.per_family.iter().map(|(k, t)| (*k, *t)))
}

/// The `k` least accurate options, lowest first; equal accuracies in
/// (task, option) order.
pub fn bottom_k_options(report: &EvalReport, k: usize) -> Vec<(OptionKey, f64)> {
    let mut v: Vec<(OptionKey, f64)> = report
        .per_option
        .iter()
        .filter_map(|(key, t)| t.accuracy().map(|a| (key.clone(), a)))
        .collect();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

fn fmt_acc(t: &Tally) -> String {
    t.accuracy().map(|a| a.to_string()).unwrap_or_default()
}

fn csv_file(dir: &Path, name: &str) -> Result<csv::Writer<std::fs::File>, EvaluationError> {
    let path = dir.join(name);
    csv::Writer::from_path(&path).map_err(|e| EvaluationError::Io {
        path: path.display().to_string(),
        source: e.into(),
    })
}

fn csv_err(dir: &Path) -> impl Fn(csv::Error) -> EvaluationError + '_ {
    move |e| EvaluationError::Io {
        path: dir.display().to_string(),
        source: e.into(),
    }
}

/// Writes `per_option.csv`, `per_task.csv`, `per_family.csv` and `summary.csv`.
pub fn export_report(report: &EvalReport, registry: &Registry, dir: &Path) -> Result<(), EvaluationError> {
    std::fs::create_dir_all(dir).map_err(|source| EvaluationError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let err = csv_err(dir);

    let mut w = csv_file(dir, "per_option.csv")?;
    w.write_record(["task", "option_id", "correct", "total", "accuracy"]).map_err(&err)?;
    for ((task, option), t) in &report.per_option {
        w.write_record([task.to_string(), option.clone(), t.correct.to_string(), t.total.to_string(), fmt_acc(t)])
            .map_err(&err)?;
    }
    w.flush().map_err(|e| err(e.into()))?;

    let mut w = csv_file(dir, "per_task.csv")?;
    w.write_record(["task", "family", "correct", "total", "accuracy"]).map_err(&err)?;
    for (task, t) in &report.per_task {
        w.write_record([task.to_string(), task.family.to_string(), t.correct.to_string(), t.total.to_string(), fmt_acc(t)])
            .map_err(&err)?;
    }
    w.flush().map_err(|e| err(e.into()))?;

    let macros = report.family_task_macro();
    let mut w = csv_file(dir, "per_family.csv")?;
    w.write_record(["family", "name", "correct", "total", "accuracy", "task_macro_accuracy"])
        .map_err(&err)?;
    for (family, t) in &report.per_family {
        w.write_record([
            family.to_string(),
            registry.family_name(*family).to_string(),
            t.correct.to_string(),
            t.total.to_string(),
            fmt_acc(t),
            macros.get(family).map(|m| m.to_string()).unwrap_or_default(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| err(e.into()))?;

    let mut w = csv_file(dir, "summary.csv")?;
    w.write_record(["scope", "correct", "total", "accuracy"]).map_err(&err)?;
    let o = &report.overall;
    w.write_record(["overall".to_string(), o.correct.to_string(), o.total.to_string(), fmt_acc(o)])
        .map_err(&err)?;
    w.flush().map_err(|e| err(e.into()))?;
    Ok(())
}

/// One row per (option, epoch): `task,option_id,epoch,train_loss,val_loss,val_accuracy`.
pub fn export_curves<'a>(
    checkpoints: impl IntoIterator<Item = &'a ProbeCheckpoint>,
    out: impl Write,
) -> Result<usize, csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task", "option_id", "epoch", "train_loss", "val_loss", "val_accuracy"])?;
    let mut rows = 0;
    for c in checkpoints {
        for e in &c.history {
            w.write_record([
                c.task.to_string(),
                c.option_id.clone(),
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_loss.to_string(),
                e.val_accuracy.to_string(),
            ])?;
            rows += 1;
        }
    }
    w.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> TaskCode {
        s.parse().unwrap()
    }

    #[test]
    fn all_correct_is_one_everywhere() {
        let r = EvalReport::from_outcomes([(t("F1QL"), "too_thick", true), (t("F2QV"), "view_side", true)]);
        assert_eq!(r.overall.accuracy(), Some(1.0));
        assert!(r.per_family.values().all(|t| t.accuracy() == Some(1.0)));
    }

    #[test]
    fn orderings_break_ties_by_code() {
        let r = EvalReport::from_outcomes([
            (t("F5QB"), "extra_content", true),
            (t("F2QB"), "extra_content", true),
            (t("F1QL"), "too_thick", false),
            (t("F1QL"), "broken_lines", true),
        ]);
        let order: Vec<String> = difficulty_ordering(&r).iter().map(|(t, _)| t.to_string()).collect();
        assert_eq!(order, ["F2QB", "F5QB", "F1QL"]);
        let bottom = bottom_k_options(&r, 100);
        assert_eq!(bottom.len(), 4);
        assert_eq!(bottom[0].0 .1, "too_thick");
    }

    #[test]
    fn curves_have_one_row_per_epoch() {
        use crate::probe::{EpochStats, MlpParams, TrainConfig};
        let ckpt = |id: &str| ProbeCheckpoint {
            task: t("F1QL"),
            option_id: id.into(),
            provider_id: "fixture".into(),
            params: MlpParams::zeros(2, 1),
            best_epoch: 1,
            val_accuracy_at_best: 0.5,
            history: (1..=20)
                .map(|epoch| EpochStats {
                    epoch,
                    train_loss: 1.0,
                    val_loss: 1.0,
                    val_accuracy: 0.5,
                })
                .collect(),
            config: TrainConfig::default(),
        };
        let (a, b) = (ckpt("too_thick"), ckpt("broken_lines"));
        let mut out = Vec::new();
        assert_eq!(export_curves([&a], &mut out).unwrap(), 20);
        let mut out = Vec::new();
        assert_eq!(export_curves([&a, &b], &mut out).unwrap(), 40);
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 41);
        assert!(text.starts_with("task,option_id,epoch,train_loss,val_loss,val_accuracy\n"));
    }
}
